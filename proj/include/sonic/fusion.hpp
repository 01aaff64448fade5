#pragma once

// Backbone stand-ins, classification branches, the logit-fusion model and
// the single-backbone baseline, plus their shared training loop.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sonic/error.hpp"
#include "sonic/image.hpp"
#include "sonic/nn.hpp"
#include "sonic/rng.hpp"

namespace sonic::fusion {

using nn::Mode;
using nn::Shape;
using nn::Tensor;

enum class BackboneKind { MiniPlain, MiniResidual };

inline std::string_view to_string(BackboneKind kind) {
  return kind == BackboneKind::MiniPlain ? "plain" : "residual";
}

inline BackboneKind parse_backbone(std::string_view name) {
  if (name == "plain" || name == "miniplain") return BackboneKind::MiniPlain;
  if (name == "residual" || name == "miniresidual") return BackboneKind::MiniResidual;
  throw InvalidArgument("unknown backbone '" + std::string(name) + "'");
}

// `sonic` fuses a plain and a residual branch; the other two are the
// single-backbone baselines.
enum class ModelKind { Sonic, SinglePlain, SingleResidual };

inline std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Sonic: return "sonic";
    case ModelKind::SinglePlain: return "plain";
    case ModelKind::SingleResidual: return "residual";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view name) {
  if (name == "sonic") return ModelKind::Sonic;
  if (name == "plain") return ModelKind::SinglePlain;
  if (name == "residual") return ModelKind::SingleResidual;
  throw InvalidArgument("unknown mode '" + std::string(name) + "' (expected sonic, plain or residual)");
}

inline constexpr std::size_t kHeadWidth = 128;
inline constexpr std::size_t kFusionWidth = 12;
inline constexpr double kDefaultDropout = 0.2;

// VGG-style: strided 3x3 conv + ReLU stack.
// ResNet-style: strided 3x3 stem, then residual blocks with identity skips.
// Both reduce 224x224 by 32x (to 7x7).
template <typename T>
void append_backbone(nn::Sequential<T>& net, BackboneKind kind, Rng& rng) {
  using nn::Conv2DSpec;
  using nn::ReLUSpec;
  auto conv_relu = [&](std::size_t out, std::size_t stride) {
    net.add(Conv2DSpec{out, 3, stride, 1}, rng);
    net.add(ReLUSpec{}, rng);
  };
  if (kind == BackboneKind::MiniPlain) {
    conv_relu(8, 4);
    conv_relu(16, 2);
    conv_relu(16, 2);
    conv_relu(32, 2);
  } else {
    conv_relu(8, 4);
    conv_relu(16, 2);
    conv_relu(16, 2);
    net.add(std::make_unique<nn::ResidualBlock<T>>(net.output_shape(), rng));
    conv_relu(32, 2);
    net.add(std::make_unique<nn::ResidualBlock<T>>(net.output_shape(), rng));
  }
}

// Backbone -> GAP -> Dense(128) -> ReLU -> Dropout -> Dense(C). The output is
// the branch's unnormalized logits; `features` are the 128 post-ReLU units.
template <typename T>
class Branch {
 public:
  Branch(BackboneKind kind, const Shape& input_shape, std::size_t classes, double dropout, Rng& rng)
      : kind_(kind), trunk_(input_shape), tail_({kHeadWidth}) {
    append_backbone(trunk_, kind, rng);
    trunk_.add(nn::GlobalAveragePoolSpec{}, rng);
    trunk_.add(nn::DenseSpec{kHeadWidth}, rng);
    trunk_.add(nn::ReLUSpec{}, rng);
    trunk_.propagate_input_grad = false;
    tail_.add(nn::DropoutSpec{dropout}, rng);
    tail_.add(nn::DenseSpec{classes}, rng);
  }

  struct Output {
    Tensor<T> features;
    Tensor<T> logits;
  };

  Output forward(const Tensor<T>& x, Mode mode, Rng& rng) {
    Output out;
    out.features = trunk_.forward(x, mode, rng);
    out.logits = tail_.forward(out.features, mode, rng);
    return out;
  }
  Output infer(const Tensor<T>& x) const {
    Output out;
    out.features = trunk_.infer(x);
    out.logits = tail_.infer(out.features);
    return out;
  }
  void backward(const Tensor<T>& grad_logits) { trunk_.backward(tail_.backward(grad_logits)); }

  void collect_parameters(std::vector<nn::Parameter<T>*>& out) {
    trunk_.collect_parameters(out);
    tail_.collect_parameters(out);
  }

  BackboneKind kind() const noexcept { return kind_; }
  std::string describe() const { return trunk_.describe() + "+" + tail_.describe(); }

 private:
  BackboneKind kind_;
  nn::Sequential<T> trunk_;
  nn::Sequential<T> tail_;
};

template <typename T>
struct ForwardResult {
  Tensor<T> probabilities;  // [B, C]
  Tensor<T> penultimate;    // [B, 12] fused or [B, 128] single
  std::vector<Tensor<T>> branch_logits;  // Z1, Z2 for the fused model
  Tensor<T> fused_logits;                // Z = [Z1 | Z2], empty for single
};

struct ModelSpec {
  ModelKind kind = ModelKind::Sonic;
  std::size_t classes = 2;
  Shape input_shape{image::kImageSide, image::kImageSide, image::kImageChannels};
  double dropout = kDefaultDropout;
  std::uint64_t init_seed = 0;

  nlohmann::json to_json() const {
    return {{"kind", std::string(to_string(kind))},
            {"classes", classes},
            {"input_shape", input_shape},
            {"dropout", dropout},
            {"init_seed", init_seed}};
  }
  static ModelSpec from_json(const nlohmann::json& j) {
    ModelSpec s;
    s.kind = parse_model_kind(j.at("kind").get<std::string>());
    s.classes = j.at("classes").get<std::size_t>();
    s.input_shape = j.at("input_shape").get<Shape>();
    s.dropout = j.at("dropout").get<double>();
    s.init_seed = j.at("init_seed").get<std::uint64_t>();
    return s;
  }
};

template <typename T>
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual ForwardResult<T> forward(const Tensor<T>& batch, Mode mode, Rng& rng) = 0;
  virtual ForwardResult<T> infer(const Tensor<T>& batch) const = 0;
  // Sets every parameter's grad to dL/d(theta) given dL/d(probabilities).
  virtual void backward(const Tensor<T>& grad_probabilities) = 0;
  virtual std::vector<std::pair<std::string, nn::Parameter<T>*>> named_parameters() = 0;
  virtual std::vector<std::string> layer_descriptions() const = 0;

  const ModelSpec& spec() const noexcept { return spec_; }
  std::size_t classes() const noexcept { return spec_.classes; }
  std::size_t penultimate_width() const noexcept {
    return spec_.kind == ModelKind::Sonic ? kFusionWidth : kHeadWidth;
  }

  void zero_grad() {
    for (auto& [name, p] : named_parameters()) p->grad.zero();
  }
  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& [name, p] : named_parameters()) n += p->size();
    return n;
  }

 protected:
  explicit Classifier(ModelSpec spec) : spec_(std::move(spec)) {}

  static void name_parameters(std::vector<std::pair<std::string, nn::Parameter<T>*>>& out,
                              const std::string& scope, std::vector<nn::Parameter<T>*> params) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      out.emplace_back(scope + "." + std::to_string(i / 2) + "." + params[i]->name, params[i]);
    }
  }

  void check_input(const Tensor<T>& batch) const {
    if (batch.rank() != spec_.input_shape.size() + 1 || batch.shape[0] == 0 ||
        !std::equal(spec_.input_shape.begin(), spec_.input_shape.end(), batch.shape.begin() + 1)) {
      throw ShapeError("classifier input " + nn::shape_string(batch.shape) +
                       " does not match [batch>0]" + nn::shape_string(spec_.input_shape));
    }
  }

  ModelSpec spec_;
};

// Two branches whose logits are concatenated and fed to
// Dense(12) -> ReLU -> Dense(C) -> Softmax.
template <typename T>
class SonicModel final : public Classifier<T> {
 public:
  explicit SonicModel(ModelSpec spec)
      : Classifier<T>(std::move(spec)), hidden_({2 * this->spec_.classes}), head_({kFusionWidth}) {
    if (this->spec_.classes < 2) throw InvalidArgument("classifier needs at least two classes");
    Rng rng(this->spec_.init_seed);
    branches_.emplace_back(BackboneKind::MiniPlain, this->spec_.input_shape, this->spec_.classes,
                           this->spec_.dropout, rng);
    branches_.emplace_back(BackboneKind::MiniResidual, this->spec_.input_shape, this->spec_.classes,
                           this->spec_.dropout, rng);
    hidden_.add(nn::DenseSpec{kFusionWidth}, rng);
    hidden_.add(nn::ReLUSpec{}, rng);
    head_.add(nn::DenseSpec{this->spec_.classes}, rng);
    head_.add(nn::SoftmaxSpec{}, rng);
  }

  ForwardResult<T> forward(const Tensor<T>& batch, Mode mode, Rng& rng) override {
    this->check_input(batch);
    ForwardResult<T> r;
    for (auto& branch : branches_) r.branch_logits.push_back(branch.forward(batch, mode, rng).logits);
    r.fused_logits = concat(r.branch_logits[0], r.branch_logits[1]);
    r.penultimate = hidden_.forward(r.fused_logits, mode, rng);
    r.probabilities = head_.forward(r.penultimate, mode, rng);
    return r;
  }

  ForwardResult<T> infer(const Tensor<T>& batch) const override {
    this->check_input(batch);
    ForwardResult<T> r;
    for (const auto& branch : branches_) r.branch_logits.push_back(branch.infer(batch).logits);
    r.fused_logits = concat(r.branch_logits[0], r.branch_logits[1]);
    r.penultimate = hidden_.infer(r.fused_logits);
    r.probabilities = head_.infer(r.penultimate);
    return r;
  }

  void backward(const Tensor<T>& grad_probabilities) override {
    this->zero_grad();
    const Tensor<T> grad_z = hidden_.backward(head_.backward(grad_probabilities));
    const std::size_t batch = grad_z.shape[0];
    const std::size_t c_n = this->spec_.classes;
    for (std::size_t k = 0; k < branches_.size(); ++k) {
      Tensor<T> g({batch, c_n});
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < c_n; ++c) g[b * c_n + c] = grad_z[b * 2 * c_n + k * c_n + c];
      branches_[k].backward(g);
    }
  }

  std::vector<std::pair<std::string, nn::Parameter<T>*>> named_parameters() override {
    std::vector<std::pair<std::string, nn::Parameter<T>*>> out;
    for (std::size_t k = 0; k < branches_.size(); ++k) {
      std::vector<nn::Parameter<T>*> ps;
      branches_[k].collect_parameters(ps);
      this->name_parameters(out, "branch" + std::to_string(k + 1), ps);
    }
    std::vector<nn::Parameter<T>*> ps;
    hidden_.collect_parameters(ps);
    head_.collect_parameters(ps);
    this->name_parameters(out, "fusion", ps);
    return out;
  }

  std::vector<std::string> layer_descriptions() const override {
    return {"branch1:" + branches_[0].describe(), "branch2:" + branches_[1].describe(),
            "fusion:" + hidden_.describe() + "+" + head_.describe()};
  }

 private:
  static Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
    const std::size_t batch = a.shape[0];
    const std::size_t ca = a.shape[1], cb = b.shape[1];
    Tensor<T> z({batch, ca + cb});
    for (std::size_t i = 0; i < batch; ++i) {
      std::copy_n(a.data.data() + i * ca, ca, z.data.data() + i * (ca + cb));
      std::copy_n(b.data.data() + i * cb, cb, z.data.data() + i * (ca + cb) + ca);
    }
    return z;
  }

  std::vector<Branch<T>> branches_;
  nn::Sequential<T> hidden_;
  nn::Sequential<T> head_;
};

// One branch whose logits feed a softmax directly.
template <typename T>
class SingleModel final : public Classifier<T> {
 public:
  explicit SingleModel(ModelSpec spec)
      : Classifier<T>(std::move(spec)),
        softmax_({this->spec_.classes}),
        branch_(init_branch()) {}

  ForwardResult<T> forward(const Tensor<T>& batch, Mode mode, Rng& rng) override {
    this->check_input(batch);
    auto out = branch_.forward(batch, mode, rng);
    ForwardResult<T> r;
    r.penultimate = std::move(out.features);
    r.probabilities = softmax_.forward(out.logits, mode, rng);
    r.branch_logits.push_back(std::move(out.logits));
    return r;
  }

  ForwardResult<T> infer(const Tensor<T>& batch) const override {
    this->check_input(batch);
    auto out = branch_.infer(batch);
    ForwardResult<T> r;
    r.penultimate = std::move(out.features);
    r.probabilities = softmax_.infer(out.logits);
    r.branch_logits.push_back(std::move(out.logits));
    return r;
  }

  void backward(const Tensor<T>& grad_probabilities) override {
    this->zero_grad();
    branch_.backward(softmax_.backward(grad_probabilities));
  }

  std::vector<std::pair<std::string, nn::Parameter<T>*>> named_parameters() override {
    std::vector<std::pair<std::string, nn::Parameter<T>*>> out;
    std::vector<nn::Parameter<T>*> ps;
    branch_.collect_parameters(ps);
    this->name_parameters(out, "branch1", ps);
    return out;
  }

  std::vector<std::string> layer_descriptions() const override {
    return {"branch1:" + branch_.describe() + "+[softmax]"};
  }

 private:
  Branch<T> init_branch() {
    if (this->spec_.classes < 2) throw InvalidArgument("classifier needs at least two classes");
    Rng rng(this->spec_.init_seed);
    const auto kind = this->spec_.kind == ModelKind::SinglePlain ? BackboneKind::MiniPlain
                                                                  : BackboneKind::MiniResidual;
    return Branch<T>(kind, this->spec_.input_shape, this->spec_.classes, this->spec_.dropout, rng);
  }

  nn::Softmax<T> softmax_;
  Branch<T> branch_;
};

template <typename T>
std::unique_ptr<Classifier<T>> make_classifier(const ModelSpec& spec) {
  if (spec.kind == ModelKind::Sonic) return std::make_unique<SonicModel<T>>(spec);
  return std::make_unique<SingleModel<T>>(spec);
}

// ---------------------------------------------------------------------------
// Training and inference over image collections.

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  nn::AdamConfig adam;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    adam.validate();
  }
};

// Copies images[indices[0..n)] into a [n, H, W, C] batch.
template <typename T>
Tensor<T> gather_batch(std::span<const image::ImageTensor> images, std::span<const std::size_t> indices) {
  if (indices.empty()) throw InvalidArgument("empty batch");
  const auto& first = images[indices[0]];
  const std::size_t per = first.values.size();
  Tensor<T> batch({indices.size(), first.height, first.width, first.channels});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& img = images[indices[i]];
    if (img.values.size() != per || img.height != first.height || img.width != first.width) {
      throw ShapeError("images in a batch must share one shape");
    }
    std::transform(img.values.begin(), img.values.end(), batch.data.begin() + static_cast<std::ptrdiff_t>(i * per),
                   [](float v) { return static_cast<T>(v); });
  }
  return batch;
}

struct TrainResult {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

// Joint minibatch training of every parameter. Each epoch reshuffles with a
// generator seeded from cfg.seed; the final partial batch is kept.
template <typename T>
TrainResult train(Classifier<T>& model, std::span<const image::ImageTensor> images,
                  std::span<const std::size_t> labels, std::span<const std::size_t> subset,
                  const TrainConfig& cfg,
                  const std::function<void(std::size_t epoch, double loss)>& on_epoch = {}) {
  cfg.validate();
  if (subset.empty()) throw InvalidArgument("training set is empty");
  if (labels.size() != images.size()) throw InvalidArgument("labels and images differ in length");
  for (std::size_t i : subset) {
    if (i >= images.size()) throw InvalidArgument("training index out of range");
    if (labels[i] >= model.classes()) {
      throw InvalidArgument("label " + std::to_string(labels[i]) + " out of range for " +
                            std::to_string(model.classes()) + " classes");
    }
  }
  Rng shuffle_rng(derive_seed(cfg.seed, 1));
  Rng dropout_rng(derive_seed(cfg.seed, 2));
  std::vector<std::size_t> order(subset.begin(), subset.end());
  auto params = model.named_parameters();

  TrainResult result;
  std::vector<std::size_t> batch_labels;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, n);
      batch_labels.clear();
      for (std::size_t i : idx) batch_labels.push_back(labels[i]);
      const auto x = gather_batch<T>(images, idx);
      const auto targets = nn::one_hot<T>(batch_labels, model.classes());
      const auto fwd = model.forward(x, Mode::Train, dropout_rng);
      const double loss = nn::cross_entropy(fwd.probabilities, targets);
      if (!std::isfinite(loss)) throw NumericalError("training loss became non-finite");
      model.backward(nn::cross_entropy_grad(fwd.probabilities, targets));
      for (auto& [name, p] : params) nn::adam_step(*p, cfg.adam);
      loss_sum += loss;
      ++batches;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
    if (on_epoch) on_epoch(epoch, result.epoch_loss.back());
  }
  return result;
}

// Eval-mode outputs for images[subset], batched; row order follows `subset`.
template <typename T>
ForwardResult<T> predict(const Classifier<T>& model, std::span<const image::ImageTensor> images,
                         std::span<const std::size_t> subset, std::size_t batch_size = 32) {
  ForwardResult<T> all;
  const std::size_t c_n = model.classes();
  const std::size_t w = model.penultimate_width();
  all.probabilities = Tensor<T>({subset.size(), c_n});
  all.penultimate = Tensor<T>({subset.size(), w});
  for (std::size_t start = 0; start < subset.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, subset.size() - start);
    const auto r = model.infer(gather_batch<T>(images, subset.subspan(start, n)));
    std::copy(r.probabilities.data.begin(), r.probabilities.data.end(),
              all.probabilities.data.begin() + static_cast<std::ptrdiff_t>(start * c_n));
    std::copy(r.penultimate.data.begin(), r.penultimate.data.end(),
              all.penultimate.data.begin() + static_cast<std::ptrdiff_t>(start * w));
  }
  return all;
}

// Row-wise argmax; ties resolve to the lowest class index.
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& probs) {
  const std::size_t c_n = probs.shape.at(1);
  std::vector<std::size_t> out(probs.shape[0]);
  for (std::size_t b = 0; b < out.size(); ++b) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < c_n; ++c)
      if (probs[b * c_n + c] > probs[b * c_n + best]) best = c;
    out[b] = best;
  }
  return out;
}

template <typename T>
Tensor<T> export_penultimate(const Classifier<T>& model, std::span<const image::ImageTensor> images) {
  std::vector<std::size_t> all(images.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return predict(model, images, all).penultimate;
}

}  // namespace sonic::fusion
