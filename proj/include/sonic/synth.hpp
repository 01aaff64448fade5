#pragma once

// Synthetic tone records for smoke and end-to-end runs.
//
// Class i is a pure tone at tone_hz[i] with label code i + 1 (baseline,
// stress, amusement), plus white Gaussian noise. Each labeled chunk is exactly
// one segmentation window long and is followed by a transient (code 0) gap
// that pads the chunk period to a whole number of strides, so every chunk
// yields exactly one segment.

#include <charconv>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "sonic/error.hpp"
#include "sonic/ingest.hpp"
#include "sonic/rng.hpp"

namespace sonic::synth {

struct SynthConfig {
  std::vector<double> tone_hz{5.0, 15.0};
  std::size_t segments_per_class = 300;
  std::size_t subjects = 10;
  double amplitude = 1.0;
  double noise_sigma = 0.3;
  double sample_rate_hz = 700.0;
  ingest::SegmentationConfig segmentation;
  std::uint64_t seed = 0;

  void validate() const {
    if (tone_hz.empty() || tone_hz.size() > 3) throw InvalidArgument("synth: one to three tones");
    for (double f : tone_hz) {
      if (!(f >= 0.0) || !(f < sample_rate_hz / 2.0)) throw InvalidArgument("synth: tone outside [0, fs/2)");
    }
    if (segments_per_class < 1 || subjects < 1) throw InvalidArgument("synth: counts must be positive");
    if (!(noise_sigma >= 0.0)) throw InvalidArgument("synth: noise_sigma must be >= 0");
    segmentation.validate(sample_rate_hz);
  }
};

// Chunks are dealt to subjects round-robin with classes interleaved.
inline std::vector<ingest::EcgRecord> synthesize_records(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t w = cfg.segmentation.window_samples(cfg.sample_rate_hz);
  const std::size_t s = cfg.segmentation.stride_samples(cfg.sample_rate_hz);
  const std::size_t period = (w / s + 1) * s;

  std::vector<ingest::EcgRecord> records(cfg.subjects);
  for (std::size_t i = 0; i < cfg.subjects; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "s%02zu", i + 1);
    records[i].subject_id = id;
    records[i].signal.sample_rate_hz = cfg.sample_rate_hz;
  }

  Rng rng(cfg.seed);
  const std::size_t classes = cfg.tone_hz.size();
  for (std::size_t chunk = 0; chunk < cfg.segments_per_class * classes; ++chunk) {
    const std::size_t cls = chunk % classes;
    auto& rec = records[chunk % cfg.subjects];
    const double phase = 2.0 * std::numbers::pi * rng.uniform();
    const double omega = 2.0 * std::numbers::pi * cfg.tone_hz[cls] / cfg.sample_rate_hz;
    for (std::size_t n = 0; n < period; ++n) {
      const bool labeled = n < w;
      const double tone = labeled ? cfg.amplitude * std::cos(omega * static_cast<double>(n) + phase) : 0.0;
      rec.signal.samples.push_back(tone + cfg.noise_sigma * rng.normal());
      rec.labels.push_back(labeled ? static_cast<int>(cls) + 1 : 0);
    }
  }
  return records;
}

// Shortest round-trip decimal for each sample.
inline std::string format_record(const ingest::EcgRecord& rec, bool header = false) {
  std::string out;
  out.reserve(rec.labels.size() * 24);
  if (header) out += "sample,label\n";
  char buf[64];
  for (std::size_t i = 0; i < rec.labels.size(); ++i) {
    auto r = std::to_chars(buf, buf + sizeof buf, rec.signal.samples[i]);
    *r.ptr++ = ',';
    r = std::to_chars(r.ptr, buf + sizeof buf, rec.labels[i]);
    *r.ptr++ = '\n';
    out.append(buf, r.ptr);
  }
  return out;
}

inline void write_records(const std::filesystem::path& dir, const std::vector<ingest::EcgRecord>& records,
                          bool header = false) {
  std::filesystem::create_directories(dir);
  for (const auto& rec : records) {
    const auto path = dir / (rec.subject_id + ".csv");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << format_record(rec, header);
  }
}

}  // namespace sonic::synth
