#pragma once

// Spectrogram -> 224x224x3 classifier input.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "sonic/dsp.hpp"
#include "sonic/error.hpp"

namespace sonic::image {

inline constexpr std::size_t kImageSide = 224;
inline constexpr std::size_t kImageChannels = 3;

// Row-major real matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {
    if (values.size() != r * c) throw InvalidArgument("matrix data does not match its shape");
  }

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

inline Matrix to_matrix(const dsp::Spectrogram& s) { return Matrix(s.frames, s.bins, s.values); }

// Height x width x 3, row-major with channels innermost. Stored in single
// precision, the training precision.
struct ImageTensor {
  std::size_t height = kImageSide;
  std::size_t width = kImageSide;
  std::size_t channels = kImageChannels;
  std::vector<float> values;

  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return values[(y * width + x) * channels + c];
  }
};

enum class NormalizeMode { LogMinMax, MinMax };

inline NormalizeMode parse_normalize_mode(std::string_view name) {
  if (name == "log_minmax" || name == "logminmax") return NormalizeMode::LogMinMax;
  if (name == "minmax") return NormalizeMode::MinMax;
  throw InvalidArgument("unknown normalize mode '" + std::string(name) + "'");
}

inline std::string_view to_string(NormalizeMode mode) {
  return mode == NormalizeMode::LogMinMax ? "log_minmax" : "minmax";
}

namespace detail {

// a + t (b - a), clamped to the closed interval spanned by a and b.
inline double lerp_contained(double a, double b, double t) {
  const double v = a + t * (b - a);
  return std::clamp(v, std::min(a, b), std::max(a, b));
}

struct AxisSample {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

// Corner-aligned: output 0 maps to input 0, output n_out-1 to input n_in-1.
inline std::vector<AxisSample> axis_samples(std::size_t n_in, std::size_t n_out) {
  std::vector<AxisSample> out(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    if (n_in == 1 || n_out == 1) {
      out[i] = {0, 0, 0.0};
      continue;
    }
    const double pos = static_cast<double>(i) * static_cast<double>(n_in - 1) /
                       static_cast<double>(n_out - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    if (lo > n_in - 1) lo = n_in - 1;
    const std::size_t hi = std::min(lo + 1, n_in - 1);
    out[i] = {lo, hi, pos - static_cast<double>(lo)};
  }
  return out;
}

}  // namespace detail

inline Matrix resize_bilinear(const Matrix& in, std::size_t out_h = kImageSide,
                              std::size_t out_w = kImageSide) {
  if (in.rows == 0 || in.cols == 0 || in.values.size() != in.rows * in.cols) {
    throw InvalidArgument("cannot resize an empty matrix");
  }
  if (out_h == 0 || out_w == 0) throw InvalidArgument("resize target must be non-empty");
  const auto ys = detail::axis_samples(in.rows, out_h);
  const auto xs = detail::axis_samples(in.cols, out_w);
  Matrix out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto& sy = ys[y];
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto& sx = xs[x];
      const double top = detail::lerp_contained(in(sy.lo, sx.lo), in(sy.lo, sx.hi), sx.frac);
      const double bottom = detail::lerp_contained(in(sy.hi, sx.lo), in(sy.hi, sx.hi), sx.frac);
      out(y, x) = detail::lerp_contained(top, bottom, sy.frac);
    }
  }
  return out;
}

// Per-image scaling into [0, 1]. A constant matrix maps to all zeros.
inline Matrix normalize(Matrix m, NormalizeMode mode = NormalizeMode::LogMinMax) {
  for (double& v : m.values) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw InvalidArgument("normalize expects finite nonnegative values");
    }
    if (mode == NormalizeMode::LogMinMax) v = std::log1p(v);
  }
  if (m.values.empty()) return m;
  const auto [lo_it, hi_it] = std::minmax_element(m.values.begin(), m.values.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  for (double& v : m.values) {
    v = range > 0.0 ? std::clamp((v - lo) / range, 0.0, 1.0) : 0.0;
  }
  return m;
}

inline ImageTensor replicate_channels(const Matrix& m) {
  ImageTensor img;
  img.height = m.rows;
  img.width = m.cols;
  img.channels = kImageChannels;
  img.values.resize(m.rows * m.cols * kImageChannels);
  for (std::size_t i = 0; i < m.rows * m.cols; ++i) {
    const float v = static_cast<float>(m.values[i]);
    for (std::size_t c = 0; c < kImageChannels; ++c) img.values[i * kImageChannels + c] = v;
  }
  return img;
}

inline ImageTensor prepare_image(const dsp::Spectrogram& s,
                                 NormalizeMode mode = NormalizeMode::LogMinMax) {
  return replicate_channels(normalize(resize_bilinear(to_matrix(s)), mode));
}

}  // namespace sonic::image
