#pragma once

// Layers with explicit reverse-mode backward passes.
//
// Image activations are [batch, height, width, channels]; vector activations
// are [batch, features]. `forward` records what `backward` needs; `infer` is
// the cache-free Eval path and is safe to call concurrently on a frozen layer.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "sonic/error.hpp"
#include "sonic/nn/tensor.hpp"
#include "sonic/rng.hpp"

namespace sonic::nn {

struct Conv2DSpec {
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
};
struct ReLUSpec {};
struct GlobalAveragePoolSpec {};
struct DenseSpec {
  std::size_t out_features = 1;
};
struct DropoutSpec {
  double rate = 0.2;
};
struct SoftmaxSpec {};

using LayerSpec =
    std::variant<Conv2DSpec, ReLUSpec, GlobalAveragePoolSpec, DenseSpec, DropoutSpec, SoftmaxSpec>;

inline std::string describe(const LayerSpec& spec) {
  std::ostringstream os;
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Conv2DSpec>) {
          os << "conv2d(out=" << s.out_channels << ",k=" << s.kernel << ",s=" << s.stride
             << ",p=" << s.padding << ")";
        } else if constexpr (std::is_same_v<S, ReLUSpec>) {
          os << "relu";
        } else if constexpr (std::is_same_v<S, GlobalAveragePoolSpec>) {
          os << "gap";
        } else if constexpr (std::is_same_v<S, DenseSpec>) {
          os << "dense(out=" << s.out_features << ")";
        } else if constexpr (std::is_same_v<S, DropoutSpec>) {
          os << "dropout(rate=" << s.rate << ")";
        } else {
          os << "softmax";
        }
      },
      spec);
  return os.str();
}

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor<T> forward(Tensor<T> input, Mode mode, Rng& rng) = 0;
  virtual Tensor<T> infer(const Tensor<T>& input) const = 0;
  // Accumulates parameter gradients and returns dL/d(input).
  virtual Tensor<T> backward(const Tensor<T>& grad_output) = 0;

  virtual void collect_parameters(std::vector<Parameter<T>*>& /*out*/) {}
  virtual std::string describe() const = 0;
  // Shape of one sample's output given one sample's input shape.
  virtual Shape output_shape() const = 0;

  // When false, backward skips computing dL/d(input) and returns an empty
  // tensor. Set on the first layer of a network.
  bool propagate_input_grad = true;

 protected:
  static void require_cache(bool present, const std::string& who) {
    if (!present) throw StateError(who + ": backward called without a recorded forward pass");
  }
};

namespace detail {

inline void check_rank(const Shape& shape, std::size_t rank, const std::string& who) {
  if (shape.size() != rank) {
    throw ShapeError(who + ": expected rank-" + std::to_string(rank) + " input, got " +
                     shape_string(shape));
  }
}

inline void check_trailing(const Shape& got, const Shape& sample_shape, const std::string& who) {
  if (got.size() != sample_shape.size() + 1 ||
      !std::equal(sample_shape.begin(), sample_shape.end(), got.begin() + 1)) {
    Shape expected{0};
    expected.insert(expected.end(), sample_shape.begin(), sample_shape.end());
    throw ShapeError(who + ": input shape " + shape_string(got) + " incompatible with expected " +
                     "[batch]" + shape_string(sample_shape));
  }
}

inline double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

template <typename T>
Tensor<T> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double limit = glorot_limit(fan_in, fan_out);
  for (T& v : t.data) v = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

}  // namespace detail

// Cross-correlation with zero padding. Weight layout [k][k][in][out].
template <typename T>
class Conv2D final : public Layer<T> {
 public:
  Conv2D(const Conv2DSpec& spec, const Shape& input_shape, Rng& rng) : spec_(spec) {
    detail::check_rank(input_shape, 3, "conv2d");
    if (spec.kernel < 1 || spec.stride < 1 || spec.out_channels < 1) {
      throw InvalidArgument("conv2d kernel, stride and out_channels must be >= 1");
    }
    in_h_ = input_shape[0];
    in_w_ = input_shape[1];
    in_c_ = input_shape[2];
    if (in_h_ + 2 * spec.padding < spec.kernel || in_w_ + 2 * spec.padding < spec.kernel) {
      throw ShapeError("conv2d: kernel " + std::to_string(spec.kernel) +
                       " larger than padded input " + shape_string(input_shape));
    }
    out_h_ = (in_h_ + 2 * spec.padding - spec.kernel) / spec.stride + 1;
    out_w_ = (in_w_ + 2 * spec.padding - spec.kernel) / spec.stride + 1;
    const std::size_t k2 = spec.kernel * spec.kernel;
    weight_ = Parameter<T>("weight", detail::glorot_uniform<T>({spec.kernel, spec.kernel, in_c_,
                                                                spec.out_channels},
                                                               k2 * in_c_, k2 * spec.out_channels, rng));
    bias_ = Parameter<T>("bias", Tensor<T>({spec.out_channels}));
  }

  Tensor<T> forward(Tensor<T> input, Mode, Rng&) override {
    auto out = infer(input);
    cache_ = std::move(input);
    return out;
  }

  Tensor<T> infer(const Tensor<T>& input) const override {
    detail::check_trailing(input.shape, {in_h_, in_w_, in_c_}, "conv2d");
    Tensor<T> out({input.shape[0], out_h_, out_w_, spec_.out_channels});
    dispatch_out_channels([&](auto co) { forward_kernel<decltype(co)::value>(input, out); });
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_output) override {
    this->require_cache(cache_.has_value(), "conv2d");
    const Tensor<T> input = std::move(*cache_);
    cache_.reset();
    detail::check_trailing(grad_output.shape, {out_h_, out_w_, spec_.out_channels}, "conv2d backward");
    if (grad_output.shape[0] != input.shape[0]) throw ShapeError("conv2d backward: batch size mismatch");
    Tensor<T> grad_input;
    if (this->propagate_input_grad) grad_input = Tensor<T>(input.shape);
    dispatch_out_channels(
        [&](auto co) { backward_kernel<decltype(co)::value>(input, grad_output, grad_input); });
    return grad_input;
  }

  void collect_parameters(std::vector<Parameter<T>*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }
  std::string describe() const override { return nn::describe(spec_); }
  Shape output_shape() const override { return {out_h_, out_w_, spec_.out_channels}; }

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

 private:
  // Runs fn with std::integral_constant<size_t, Co> for the common channel
  // counts (fully unrolled inner loops) and 0 otherwise (runtime loops).
  template <typename Fn>
  void dispatch_out_channels(Fn&& fn) const {
    switch (spec_.out_channels) {
      case 4: fn(std::integral_constant<std::size_t, 4>{}); break;
      case 8: fn(std::integral_constant<std::size_t, 8>{}); break;
      case 16: fn(std::integral_constant<std::size_t, 16>{}); break;
      case 32: fn(std::integral_constant<std::size_t, 32>{}); break;
      default: fn(std::integral_constant<std::size_t, 0>{}); break;
    }
  }

  // Valid kernel columns [kx_lo, kx_hi) and the first input column for output
  // column ox. Rows are handled the same way.
  struct TapRange {
    std::size_t lo, hi, first;
  };
  TapRange tap_range(std::size_t o, std::size_t extent) const {
    const std::size_t origin = o * spec_.stride;  // padded coordinate of tap 0
    const std::size_t lo = origin < spec_.padding ? spec_.padding - origin : 0;
    const std::size_t end_p = extent + spec_.padding;  // one past last real padded index
    const std::size_t hi = std::min(spec_.kernel, end_p > origin ? end_p - origin : 0);
    return {lo, std::max(lo, hi), origin + lo - spec_.padding};
  }

  template <std::size_t CO>
  void forward_kernel(const Tensor<T>& input, Tensor<T>& out) const {
    const std::size_t co_n = CO ? CO : spec_.out_channels;
    const std::size_t k = spec_.kernel;
    const T* __restrict w = weight_.value.data.data();
    const T* __restrict bias = bias_.value.data.data();
    for (std::size_t b = 0; b < input.shape[0]; ++b) {
      const T* in_b = input.data.data() + b * in_h_ * in_w_ * in_c_;
      for (std::size_t oy = 0; oy < out_h_; ++oy) {
        const TapRange ry = tap_range(oy, in_h_);
        for (std::size_t ox = 0; ox < out_w_; ++ox) {
          const TapRange rx = tap_range(ox, in_w_);
          const std::size_t row_len = (rx.hi - rx.lo) * in_c_;
          T* __restrict o = out.data.data() + ((b * out_h_ + oy) * out_w_ + ox) * co_n;
          if constexpr (CO > 0) {
            T acc[CO];
            for (std::size_t co = 0; co < CO; ++co) acc[co] = bias[co];
            for (std::size_t ky = ry.lo; ky < ry.hi; ++ky) {
              const T* __restrict px = in_b + ((ry.first + ky - ry.lo) * in_w_ + rx.first) * in_c_;
              const T* __restrict wr = w + ((ky * k + rx.lo) * in_c_) * CO;
              for (std::size_t j = 0; j < row_len; ++j) {
                const T a = px[j];
#pragma omp simd
                for (std::size_t co = 0; co < CO; ++co) acc[co] += a * wr[j * CO + co];
              }
            }
            for (std::size_t co = 0; co < CO; ++co) o[co] = acc[co];
          } else {
            for (std::size_t co = 0; co < co_n; ++co) o[co] = bias[co];
            for (std::size_t ky = ry.lo; ky < ry.hi; ++ky) {
              const T* __restrict px = in_b + ((ry.first + ky - ry.lo) * in_w_ + rx.first) * in_c_;
              const T* __restrict wr = w + ((ky * k + rx.lo) * in_c_) * co_n;
              for (std::size_t j = 0; j < row_len; ++j) {
                const T a = px[j];
                for (std::size_t co = 0; co < co_n; ++co) o[co] += a * wr[j * co_n + co];
              }
            }
          }
        }
      }
    }
  }

  // Gathers one sample's receptive fields into rows of `patches`
  // ([out_h*out_w, k*k*in_c], zeros where the kernel overlaps padding).
  void im2col(const T* in_b, std::vector<T>& patches) const {
    const std::size_t k = spec_.kernel;
    const std::size_t row = k * k * in_c_;
    patches.assign(out_h_ * out_w_ * row, T{});
    for (std::size_t oy = 0; oy < out_h_; ++oy) {
      const TapRange ry = tap_range(oy, in_h_);
      for (std::size_t ox = 0; ox < out_w_; ++ox) {
        const TapRange rx = tap_range(ox, in_w_);
        T* dst = patches.data() + (oy * out_w_ + ox) * row;
        for (std::size_t ky = ry.lo; ky < ry.hi; ++ky) {
          const T* src = in_b + ((ry.first + ky - ry.lo) * in_w_ + rx.first) * in_c_;
          std::copy_n(src, (rx.hi - rx.lo) * in_c_, dst + (ky * k + rx.lo) * in_c_);
        }
      }
    }
  }

  // Scatter-adds patch-row gradients back onto the input image.
  void col2im(const std::vector<T>& patches, T* gin_b) const {
    const std::size_t k = spec_.kernel;
    const std::size_t row = k * k * in_c_;
    for (std::size_t oy = 0; oy < out_h_; ++oy) {
      const TapRange ry = tap_range(oy, in_h_);
      for (std::size_t ox = 0; ox < out_w_; ++ox) {
        const TapRange rx = tap_range(ox, in_w_);
        const T* src = patches.data() + (oy * out_w_ + ox) * row;
        for (std::size_t ky = ry.lo; ky < ry.hi; ++ky) {
          T* __restrict dst = gin_b + ((ry.first + ky - ry.lo) * in_w_ + rx.first) * in_c_;
          const T* __restrict s = src + (ky * k + rx.lo) * in_c_;
          const std::size_t n = (rx.hi - rx.lo) * in_c_;
          for (std::size_t j = 0; j < n; ++j) dst[j] += s[j];
        }
      }
    }
  }

  template <std::size_t CO>
  void backward_kernel(const Tensor<T>& input, const Tensor<T>& grad_output, Tensor<T>& grad_input) {
    const std::size_t co_n = CO ? CO : spec_.out_channels;
    const std::size_t row = spec_.kernel * spec_.kernel * in_c_;
    const std::size_t pixels = out_h_ * out_w_;
    const bool want_input = this->propagate_input_grad;
    T* __restrict gw = weight_.grad.data.data();
    T* __restrict gb = bias_.grad.data.data();

    // weight^T as [co][row] for the input-gradient product.
    std::vector<T> wt;
    if (want_input) {
      wt.resize(co_n * row);
      for (std::size_t j = 0; j < row; ++j)
        for (std::size_t co = 0; co < co_n; ++co) wt[co * row + j] = weight_.value.data[j * co_n + co];
    }
    std::vector<T> patches, grad_patches;
    for (std::size_t b = 0; b < input.shape[0]; ++b) {
      im2col(input.data.data() + b * in_h_ * in_w_ * in_c_, patches);
      const T* __restrict g = grad_output.data.data() + b * pixels * co_n;
      for (std::size_t p = 0; p < pixels; ++p)
        for (std::size_t co = 0; co < co_n; ++co) gb[co] += g[p * co_n + co];

      // dW[j][:] += sum_p patches[p][j] * g[p][:], kRows rows of dW at a time.
      const T* __restrict pt = patches.data();
      std::size_t j = 0;
      if constexpr (CO > 0) {
        constexpr std::size_t kRows = CO <= 16 ? 8 : 4;
        for (; j + kRows <= row; j += kRows) {
          T acc[kRows][CO] = {};
          for (std::size_t p = 0; p < pixels; ++p) {
            const T* __restrict gp = g + p * CO;
            const T* __restrict pp = pt + p * row + j;
            for (std::size_t r = 0; r < kRows; ++r) {
              const T a = pp[r];
#pragma omp simd
              for (std::size_t co = 0; co < CO; ++co) acc[r][co] += a * gp[co];
            }
          }
          for (std::size_t r = 0; r < kRows; ++r)
            for (std::size_t co = 0; co < CO; ++co) gw[(j + r) * CO + co] += acc[r][co];
        }
      }
      for (; j < row; ++j) {
        for (std::size_t p = 0; p < pixels; ++p) {
          const T a = pt[p * row + j];
          for (std::size_t co = 0; co < co_n; ++co) gw[j * co_n + co] += a * g[p * co_n + co];
        }
      }

      if (want_input) {
        // dPatches[p][:] = sum_co g[p][co] * W^T[co][:]
        grad_patches.assign(pixels * row, T{});
        for (std::size_t p = 0; p < pixels; ++p) {
          T* __restrict dp = grad_patches.data() + p * row;
          for (std::size_t co = 0; co < co_n; ++co) {
            const T gc = g[p * co_n + co];
            const T* __restrict wr = wt.data() + co * row;
#pragma omp simd
            for (std::size_t q = 0; q < row; ++q) dp[q] += gc * wr[q];
          }
        }
        col2im(grad_patches, grad_input.data.data() + b * in_h_ * in_w_ * in_c_);
      }
    }
  }

  Conv2DSpec spec_;
  std::size_t in_h_ = 0, in_w_ = 0, in_c_ = 0, out_h_ = 0, out_w_ = 0;
  Parameter<T> weight_;
  Parameter<T> bias_;
  std::optional<Tensor<T>> cache_;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  explicit ReLU(const Shape& input_shape) : shape_(input_shape) {}

  Tensor<T> forward(Tensor<T> input, Mode, Rng&) override {
    detail::check_trailing(input.shape, shape_, "relu");
    for (T& v : input.data) v = v > T{} ? v : T{};
    cache_ = input;
    return input;
  }
  Tensor<T> infer(const Tensor<T>& input) const override {
    detail::check_trailing(input.shape, shape_, "relu");
    Tensor<T> out = input;
    for (T& v : out.data) v = v > T{} ? v : T{};
    return out;
  }
  Tensor<T> backward(const Tensor<T>& grad_output) override {
    this->require_cache(cache_.has_value(), "relu");
    Tensor<T> out = std::move(*cache_);
    cache_.reset();
    if (out.shape != grad_output.shape) throw ShapeError("relu backward: shape mismatch");
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = out.data[i] > T{} ? grad_output.data[i] : T{};
    return out;
  }
  std::string describe() const override { return "relu"; }
  Shape output_shape() const override { return shape_; }

 private:
  Shape shape_;
  std::optional<Tensor<T>> cache_;
};

// [B, H, W, C] -> [B, C] by per-channel spatial mean.
template <typename T>
class GlobalAveragePool final : public Layer<T> {
 public:
  explicit GlobalAveragePool(const Shape& input_shape) : shape_(input_shape) {
    detail::check_rank(input_shape, 3, "gap");
  }

  Tensor<T> forward(Tensor<T> input, Mode, Rng&) override {
    auto out = infer(input);
    batch_ = input.shape[0];
    return out;
  }
  Tensor<T> infer(const Tensor<T>& input) const override {
    detail::check_trailing(input.shape, shape_, "gap");
    const std::size_t batch = input.shape[0];
    const std::size_t hw = shape_[0] * shape_[1];
    const std::size_t c_n = shape_[2];
    Tensor<T> out({batch, c_n});
    for (std::size_t b = 0; b < batch; ++b) {
      const T* in = input.data.data() + b * hw * c_n;
      T* o = out.data.data() + b * c_n;
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t c = 0; c < c_n; ++c) o[c] += in[p * c_n + c];
      for (std::size_t c = 0; c < c_n; ++c) o[c] /= static_cast<T>(hw);
    }
    return out;
  }
  Tensor<T> backward(const Tensor<T>& grad_output) override {
    this->require_cache(batch_.has_value(), "gap");
    const std::size_t batch = *batch_;
    batch_.reset();
    const std::size_t hw = shape_[0] * shape_[1];
    const std::size_t c_n = shape_[2];
    if (grad_output.shape != Shape{batch, c_n}) throw ShapeError("gap backward: shape mismatch");
    Tensor<T> grad({batch, shape_[0], shape_[1], c_n});
    const T scale = T{1} / static_cast<T>(hw);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* g = grad_output.data.data() + b * c_n;
      T* gi = grad.data.data() + b * hw * c_n;
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t c = 0; c < c_n; ++c) gi[p * c_n + c] = g[c] * scale;
    }
    return grad;
  }
  std::string describe() const override { return "gap"; }
  Shape output_shape() const override { return {shape_[2]}; }

 private:
  Shape shape_;
  std::optional<std::size_t> batch_;
};

// y = W x + b with W stored [out][in].
template <typename T>
class Dense final : public Layer<T> {
 public:
  Dense(const DenseSpec& spec, const Shape& input_shape, Rng& rng) : spec_(spec) {
    detail::check_rank(input_shape, 1, "dense");
    if (spec.out_features < 1) throw InvalidArgument("dense out_features must be >= 1");
    in_ = input_shape[0];
    weight_ = Parameter<T>("weight", detail::glorot_uniform<T>({spec.out_features, in_}, in_,
                                                               spec.out_features, rng));
    bias_ = Parameter<T>("bias", Tensor<T>({spec.out_features}));
  }

  Tensor<T> forward(Tensor<T> input, Mode, Rng&) override {
    auto out = infer(input);
    cache_ = std::move(input);
    return out;
  }
  Tensor<T> infer(const Tensor<T>& input) const override {
    detail::check_trailing(input.shape, {in_}, "dense");
    const std::size_t batch = input.shape[0];
    const std::size_t out_n = spec_.out_features;
    Tensor<T> out({batch, out_n});
    for (std::size_t b = 0; b < batch; ++b) {
      const T* x = input.data.data() + b * in_;
      for (std::size_t o = 0; o < out_n; ++o) {
        const T* w = weight_.value.data.data() + o * in_;
        T acc{};
#pragma omp simd reduction(+ : acc)
        for (std::size_t i = 0; i < in_; ++i) acc += w[i] * x[i];
        out.data[b * out_n + o] = acc + bias_.value.data[o];
      }
    }
    return out;
  }
  Tensor<T> backward(const Tensor<T>& grad_output) override {
    this->require_cache(cache_.has_value(), "dense");
    const Tensor<T> input = std::move(*cache_);
    cache_.reset();
    const std::size_t batch = input.shape[0];
    const std::size_t out_n = spec_.out_features;
    if (grad_output.shape != Shape{batch, out_n}) throw ShapeError("dense backward: shape mismatch");
    Tensor<T> grad_input;
    if (this->propagate_input_grad) grad_input = Tensor<T>(input.shape);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* x = input.data.data() + b * in_;
      const T* g = grad_output.data.data() + b * out_n;
      for (std::size_t o = 0; o < out_n; ++o) {
        const T go = g[o];
        bias_.grad.data[o] += go;
        T* __restrict gw = weight_.grad.data.data() + o * in_;
        for (std::size_t i = 0; i < in_; ++i) gw[i] += go * x[i];
        if (this->propagate_input_grad) {
          const T* __restrict w = weight_.value.data.data() + o * in_;
          T* __restrict gx = grad_input.data.data() + b * in_;
          for (std::size_t i = 0; i < in_; ++i) gx[i] += go * w[i];
        }
      }
    }
    return grad_input;
  }
  void collect_parameters(std::vector<Parameter<T>*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }
  std::string describe() const override { return nn::describe(spec_); }
  Shape output_shape() const override { return {spec_.out_features}; }

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

 private:
  DenseSpec spec_;
  std::size_t in_ = 0;
  Parameter<T> weight_;
  Parameter<T> bias_;
  std::optional<Tensor<T>> cache_;
};

// Inverted dropout: Train zeroes each unit with probability `rate` and scales
// survivors by 1/(1 - rate); Eval is the identity.
template <typename T>
class Dropout final : public Layer<T> {
 public:
  Dropout(const DropoutSpec& spec, const Shape& input_shape) : spec_(spec), shape_(input_shape) {
    if (!(spec.rate >= 0.0 && spec.rate < 1.0)) throw InvalidArgument("dropout rate must be in [0, 1)");
  }

  Tensor<T> forward(Tensor<T> input, Mode mode, Rng& rng) override {
    detail::check_trailing(input.shape, shape_, "dropout");
    Tensor<T> mask(input.shape, T{1});
    if (mode == Mode::Train && spec_.rate > 0.0) {
      const T keep_scale = static_cast<T>(1.0 / (1.0 - spec_.rate));
      for (T& m : mask.data) m = rng.bernoulli(spec_.rate) ? T{} : keep_scale;
    }
    for (std::size_t i = 0; i < input.size(); ++i) input.data[i] *= mask.data[i];
    cache_ = std::move(mask);
    return input;
  }
  Tensor<T> infer(const Tensor<T>& input) const override {
    detail::check_trailing(input.shape, shape_, "dropout");
    return input;
  }
  Tensor<T> backward(const Tensor<T>& grad_output) override {
    this->require_cache(cache_.has_value(), "dropout");
    Tensor<T> mask = std::move(*cache_);
    cache_.reset();
    if (mask.shape != grad_output.shape) throw ShapeError("dropout backward: shape mismatch");
    for (std::size_t i = 0; i < mask.size(); ++i) mask.data[i] *= grad_output.data[i];
    return mask;
  }
  std::string describe() const override { return nn::describe(spec_); }
  Shape output_shape() const override { return shape_; }

 private:
  DropoutSpec spec_;
  Shape shape_;
  std::optional<Tensor<T>> cache_;
};

// Row-wise softmax over [B, C] with a max shift.
template <typename T>
class Softmax final : public Layer<T> {
 public:
  explicit Softmax(const Shape& input_shape) : shape_(input_shape) {
    detail::check_rank(input_shape, 1, "softmax");
  }

  Tensor<T> forward(Tensor<T> input, Mode, Rng&) override {
    auto out = infer(input);
    cache_ = out;
    return out;
  }
  Tensor<T> infer(const Tensor<T>& input) const override {
    detail::check_trailing(input.shape, shape_, "softmax");
    Tensor<T> out = input;
    const std::size_t c_n = shape_[0];
    for (std::size_t b = 0; b < input.shape[0]; ++b) {
      T* row = out.data.data() + b * c_n;
      const T mx = *std::max_element(row, row + c_n);
      T sum{};
      for (std::size_t c = 0; c < c_n; ++c) {
        row[c] = std::exp(row[c] - mx);
        sum += row[c];
      }
      for (std::size_t c = 0; c < c_n; ++c) row[c] /= sum;
    }
    return out;
  }
  Tensor<T> backward(const Tensor<T>& grad_output) override {
    this->require_cache(cache_.has_value(), "softmax");
    Tensor<T> y = std::move(*cache_);
    cache_.reset();
    if (y.shape != grad_output.shape) throw ShapeError("softmax backward: shape mismatch");
    const std::size_t c_n = shape_[0];
    for (std::size_t b = 0; b < y.shape[0]; ++b) {
      T* row = y.data.data() + b * c_n;
      const T* g = grad_output.data.data() + b * c_n;
      T dot{};
      for (std::size_t c = 0; c < c_n; ++c) dot += row[c] * g[c];
      for (std::size_t c = 0; c < c_n; ++c) row[c] = row[c] * (g[c] - dot);
    }
    return y;
  }
  std::string describe() const override { return "softmax"; }
  Shape output_shape() const override { return shape_; }

 private:
  Shape shape_;
  std::optional<Tensor<T>> cache_;
};

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec, const Shape& input_shape, Rng& rng) {
  return std::visit(
      [&](const auto& s) -> std::unique_ptr<Layer<T>> {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Conv2DSpec>) {
          return std::make_unique<Conv2D<T>>(s, input_shape, rng);
        } else if constexpr (std::is_same_v<S, ReLUSpec>) {
          return std::make_unique<ReLU<T>>(input_shape);
        } else if constexpr (std::is_same_v<S, GlobalAveragePoolSpec>) {
          return std::make_unique<GlobalAveragePool<T>>(input_shape);
        } else if constexpr (std::is_same_v<S, DenseSpec>) {
          return std::make_unique<Dense<T>>(s, input_shape, rng);
        } else if constexpr (std::is_same_v<S, DropoutSpec>) {
          return std::make_unique<Dropout<T>>(s, input_shape);
        } else {
          return std::make_unique<Softmax<T>>(input_shape);
        }
      },
      spec);
}

// Layers applied in order.
template <typename T>
class Sequential final : public Layer<T> {
 public:
  explicit Sequential(Shape input_shape) : input_shape_(std::move(input_shape)) {}

  Sequential& add(std::unique_ptr<Layer<T>> layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }
  Sequential& add(const LayerSpec& spec, Rng& rng) {
    return add(make_layer<T>(spec, output_shape(), rng));
  }

  Tensor<T> forward(Tensor<T> input, Mode mode, Rng& rng) override {
    for (auto& layer : layers_) input = layer->forward(std::move(input), mode, rng);
    return input;
  }
  Tensor<T> infer(const Tensor<T>& input) const override {
    Tensor<T> x = input;
    for (const auto& layer : layers_) x = layer->infer(x);
    return x;
  }
  Tensor<T> backward(const Tensor<T>& grad_output) override {
    Tensor<T> g = grad_output;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      if (i == 0) layers_[0]->propagate_input_grad = this->propagate_input_grad;
      g = layers_[i]->backward(std::move(g));
    }
    return g;
  }
  void collect_parameters(std::vector<Parameter<T>*>& out) override {
    for (auto& layer : layers_) layer->collect_parameters(out);
  }
  std::string describe() const override {
    std::string s = "[";
    for (std::size_t i = 0; i < layers_.size(); ++i) s += (i ? "," : "") + layers_[i]->describe();
    return s + "]";
  }
  Shape output_shape() const override {
    return layers_.empty() ? input_shape_ : layers_.back()->output_shape();
  }

  std::size_t size() const noexcept { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

 private:
  Shape input_shape_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

// out = relu(x + conv(relu(conv(x)))) with shape-preserving 3x3 convolutions.
template <typename T>
class ResidualBlock final : public Layer<T> {
 public:
  ResidualBlock(const Shape& input_shape, Rng& rng) : body_(input_shape), shape_(input_shape) {
    detail::check_rank(input_shape, 3, "residual");
    const Conv2DSpec conv{input_shape[2], 3, 1, 1};
    body_.add(conv, rng);
    body_.add(ReLUSpec{}, rng);
    body_.add(conv, rng);
  }

  Tensor<T> forward(Tensor<T> input, Mode mode, Rng& rng) override {
    Tensor<T> out = body_.forward(input, mode, rng);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const T v = out.data[i] + input.data[i];
      out.data[i] = v > T{} ? v : T{};
    }
    cache_ = out;
    return out;
  }
  Tensor<T> infer(const Tensor<T>& input) const override {
    Tensor<T> out = body_.infer(input);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const T v = out.data[i] + input.data[i];
      out.data[i] = v > T{} ? v : T{};
    }
    return out;
  }
  Tensor<T> backward(const Tensor<T>& grad_output) override {
    this->require_cache(cache_.has_value(), "residual");
    Tensor<T> g = std::move(*cache_);
    cache_.reset();
    if (g.shape != grad_output.shape) throw ShapeError("residual backward: shape mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = g.data[i] > T{} ? grad_output.data[i] : T{};
    body_.propagate_input_grad = true;
    Tensor<T> grad_input = body_.backward(g);
    for (std::size_t i = 0; i < grad_input.size(); ++i) grad_input.data[i] += g.data[i];
    return grad_input;
  }
  void collect_parameters(std::vector<Parameter<T>*>& out) override { body_.collect_parameters(out); }
  std::string describe() const override { return "residual" + body_.describe(); }
  Shape output_shape() const override { return shape_; }

 private:
  Sequential<T> body_;
  Shape shape_;
  std::optional<Tensor<T>> cache_;
};

}  // namespace sonic::nn
