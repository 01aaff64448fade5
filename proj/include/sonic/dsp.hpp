#pragma once

// Window functions, radix-2 FFT and the STFT magnitude spectrogram.
//
// Everything here works in double precision and is free of shared mutable
// state; all functions may be called concurrently.

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sonic/error.hpp"

namespace sonic::dsp {

using Complex = std::complex<double>;

struct RealSignal {
  std::vector<double> samples;
  double sample_rate_hz = 0.0;

  std::size_t size() const noexcept { return samples.size(); }

  void validate() const {
    if (samples.empty()) throw InvalidArgument("signal must contain at least one sample");
    if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz))
      throw InvalidArgument("sample rate must be positive and finite");
    for (double v : samples)
      if (!std::isfinite(v)) throw InvalidArgument("signal contains a non-finite sample");
  }
};

enum class WindowKind { Rectangular, Hann, Hamming };

inline std::string_view to_string(WindowKind kind) {
  switch (kind) {
    case WindowKind::Rectangular: return "rectangular";
    case WindowKind::Hann: return "hann";
    case WindowKind::Hamming: return "hamming";
  }
  return "?";
}

inline WindowKind parse_window_kind(std::string_view name) {
  if (name == "rectangular" || name == "rect") return WindowKind::Rectangular;
  if (name == "hann" || name == "hanning") return WindowKind::Hann;
  if (name == "hamming") return WindowKind::Hamming;
  throw InvalidArgument("unknown window kind '" + std::string(name) + "'");
}

struct StftConfig {
  std::size_t window_len = 256;
  std::size_t hop = 64;
  std::size_t nfft = 256;
  WindowKind window = WindowKind::Hann;

  void validate() const {
    if (window_len < 1) throw InvalidArgument("stft window_len must be >= 1");
    if (hop < 1) throw InvalidArgument("stft hop must be >= 1");
    if (nfft < 2 || !std::has_single_bit(nfft))
      throw InvalidArgument("stft nfft must be a power of two >= 2");
    if (window_len > nfft) throw InvalidArgument("stft window_len must not exceed nfft");
  }
};

// Row-major M x (nfft/2 + 1) magnitude matrix with its axes.
struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<double> values;
  std::vector<double> freqs_hz;
  std::vector<double> times_s;

  double at(std::size_t frame, std::size_t bin) const { return values[frame * bins + bin]; }
};

// Symmetric windows (denominator len - 1). A length-1 window is [1.0] for
// every kind.
inline std::vector<double> window_coefficients(WindowKind kind, std::size_t len) {
  if (len == 0) throw InvalidArgument("window length must be >= 1");
  std::vector<double> w(len, 1.0);
  if (len == 1 || kind == WindowKind::Rectangular) return w;
  const double denom = static_cast<double>(len - 1);
  for (std::size_t n = 0; n < len; ++n) {
    const double c = std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / denom);
    w[n] = kind == WindowKind::Hann ? 0.5 * (1.0 - c) : 0.54 - 0.46 * c;
  }
  return w;
}

// Precomputed bit-reversal permutation and twiddle table for one length.
// Forward, unnormalized: X[k] = sum_n x[n] e^{-2 pi i k n / N}.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n) {
    if (!std::has_single_bit(n)) {
      throw InvalidArgument("fft length " + std::to_string(n) + " is not a power of two");
    }
    const int bits = std::countr_zero(n);
    reversed_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
      reversed_[i] = r;
    }
    twiddles_.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      twiddles_[k] = Complex(std::cos(angle), std::sin(angle));
    }
  }

  std::size_t size() const noexcept { return n_; }

  void transform(std::span<Complex> data) const {
    if (data.size() != n_) {
      throw InvalidArgument("fft buffer length " + std::to_string(data.size()) +
                            " does not match plan length " + std::to_string(n_));
    }
    for (std::size_t i = 0; i < n_; ++i) {
      if (i < reversed_[i]) std::swap(data[i], data[reversed_[i]]);
    }
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t stride = n_ / len;
      for (std::size_t start = 0; start < n_; start += len) {
        for (std::size_t j = 0; j < half; ++j) {
          const Complex w = twiddles_[j * stride];
          const Complex x = data[start + j + half];
          const Complex t(w.real() * x.real() - w.imag() * x.imag(),
                          w.real() * x.imag() + w.imag() * x.real());
          const Complex u = data[start + j];
          data[start + j] = u + t;
          data[start + j + half] = u - t;
        }
      }
    }
  }

 private:
  std::size_t n_;
  std::vector<std::size_t> reversed_;
  std::vector<Complex> twiddles_;
};

inline std::vector<Complex> fft(std::span<const Complex> input) {
  FftPlan plan(input.size());
  std::vector<Complex> out(input.begin(), input.end());
  plan.transform(out);
  return out;
}

inline std::size_t num_windows(std::size_t signal_len, std::size_t window_len, std::size_t hop) {
  if (window_len == 0 || hop == 0) throw InvalidArgument("window length and hop must be positive");
  if (signal_len < window_len) {
    throw SignalTooShort("signal of " + std::to_string(signal_len) +
                         " samples is shorter than the analysis window of " +
                         std::to_string(window_len));
  }
  return (signal_len - window_len) / hop + 1;
}

inline std::vector<double> frequency_axis(std::size_t nfft, double sample_rate_hz) {
  if (nfft == 0 || nfft % 2 != 0) throw InvalidArgument("nfft must be even and positive");
  std::vector<double> f(nfft / 2 + 1);
  for (std::size_t k = 0; k < f.size(); ++k) {
    f[k] = static_cast<double>(k) * sample_rate_hz / static_cast<double>(nfft);
  }
  return f;
}

inline std::vector<double> time_axis(std::size_t frames, std::size_t hop, double sample_rate_hz) {
  std::vector<double> t(frames);
  for (std::size_t m = 0; m < frames; ++m) {
    t[m] = static_cast<double>(m * hop) / sample_rate_hz;
  }
  return t;
}

// Frame m covers samples [m*hop, m*hop + window_len); the segment is windowed
// on its local index, zero-padded to nfft and transformed. Row m holds
// |X_m[k]| for k = 0..nfft/2.
inline Spectrogram compute_spectrogram(const RealSignal& signal, const StftConfig& config) {
  config.validate();
  if (!(signal.sample_rate_hz > 0.0)) throw InvalidArgument("sample rate must be positive");
  const std::size_t frames = num_windows(signal.size(), config.window_len, config.hop);
  const auto window = window_coefficients(config.window, config.window_len);
  const FftPlan plan(config.nfft);

  Spectrogram s;
  s.frames = frames;
  s.bins = config.nfft / 2 + 1;
  s.values.resize(frames * s.bins);
  s.freqs_hz = frequency_axis(config.nfft, signal.sample_rate_hz);
  s.times_s = time_axis(frames, config.hop, signal.sample_rate_hz);

  std::vector<Complex> buffer(config.nfft);
  for (std::size_t m = 0; m < frames; ++m) {
    const std::size_t start = m * config.hop;
    for (std::size_t j = 0; j < config.window_len; ++j) {
      buffer[j] = Complex(signal.samples[start + j] * window[j], 0.0);
    }
    std::fill(buffer.begin() + static_cast<std::ptrdiff_t>(config.window_len), buffer.end(),
              Complex{});
    plan.transform(buffer);
    double* row = s.values.data() + m * s.bins;
    for (std::size_t k = 0; k < s.bins; ++k) {
      const double re = buffer[k].real();
      const double im = buffer[k].imag();
      row[k] = std::sqrt(re * re + im * im);
    }
  }
  return s;
}

}  // namespace sonic::dsp
