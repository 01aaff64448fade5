#pragma once

// Labeled ECG records from plain CSV and their fixed-length segmentation.
//
// Record CSV: one `sample,label` pair per line, sample a decimal real, label
// an integer 0..7 (0 transient, 1 baseline, 2 stress, 3 amusement, the rest
// ignored). No header unless `skip_header` is set.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sonic/dsp.hpp"
#include "sonic/error.hpp"

namespace sonic::ingest {

enum class AffectLabel { Baseline = 1, Stress = 2, Amusement = 3 };

inline constexpr int kMaxLabelCode = 7;

inline std::optional<AffectLabel> label_from_code(int code) {
  switch (code) {
    case 1: return AffectLabel::Baseline;
    case 2: return AffectLabel::Stress;
    case 3: return AffectLabel::Amusement;
    default: return std::nullopt;
  }
}

inline int code_of(AffectLabel label) { return static_cast<int>(label); }

inline std::string_view to_string(AffectLabel label) {
  switch (label) {
    case AffectLabel::Baseline: return "baseline";
    case AffectLabel::Stress: return "stress";
    case AffectLabel::Amusement: return "amusement";
  }
  return "?";
}

struct EcgRecord {
  std::string subject_id;
  dsp::RealSignal signal;
  std::vector<int> labels;
};

struct SegmentationConfig {
  double window_seconds = 5.0;
  double stride_seconds = 2.0;

  static std::size_t to_samples(double seconds, double sample_rate_hz, const char* what) {
    const double exact = seconds * sample_rate_hz;
    const double rounded = std::round(exact);
    if (!(seconds > 0.0) || !std::isfinite(exact) || std::abs(exact - rounded) > 1e-6 ||
        rounded < 1.0) {
      throw InvalidArgument(std::string("segmentation ") + what +
                            " must be a positive whole number of samples at the sample rate");
    }
    return static_cast<std::size_t>(rounded);
  }

  std::size_t window_samples(double sample_rate_hz) const {
    return to_samples(window_seconds, sample_rate_hz, "window_seconds");
  }
  std::size_t stride_samples(double sample_rate_hz) const {
    return to_samples(stride_seconds, sample_rate_hz, "stride_seconds");
  }
  void validate(double sample_rate_hz) const {
    (void)window_samples(sample_rate_hz);
    (void)stride_samples(sample_rate_hz);
  }
};

struct Segment {
  std::vector<double> samples;
  AffectLabel label = AffectLabel::Baseline;
  std::string subject_id;
  std::size_t start_index = 0;
};

enum class TaskScheme { TwoClass, ThreeClass };

inline std::size_t class_count(TaskScheme scheme) {
  return scheme == TaskScheme::TwoClass ? 2 : 3;
}

inline std::string_view to_string(TaskScheme scheme) {
  return scheme == TaskScheme::TwoClass ? "2class" : "3class";
}

inline TaskScheme parse_task(std::string_view name) {
  if (name == "2class" || name == "2") return TaskScheme::TwoClass;
  if (name == "3class" || name == "3") return TaskScheme::ThreeClass;
  throw InvalidArgument("unknown task '" + std::string(name) + "' (expected 2class or 3class)");
}

// Stress vs non-stress for two classes; baseline/stress/amusement -> 0/1/2.
inline std::size_t class_index(AffectLabel label, TaskScheme scheme) {
  if (scheme == TaskScheme::TwoClass) return label == AffectLabel::Stress ? 1 : 0;
  switch (label) {
    case AffectLabel::Baseline: return 0;
    case AffectLabel::Stress: return 1;
    case AffectLabel::Amusement: return 2;
  }
  return 0;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  text = trim(text);
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc{} && ptr == text.data() + text.size();
}

}  // namespace detail

// Parses record CSV text; `source` names the input in error messages.
inline EcgRecord parse_record(std::string_view text, std::string subject_id, double sample_rate_hz,
                              const std::string& source, bool skip_header = false) {
  if (!(sample_rate_hz > 0.0)) throw InvalidArgument("sample rate must be positive");
  EcgRecord record;
  record.subject_id = std::move(subject_id);
  record.signal.sample_rate_hz = sample_rate_hz;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (skip_header && line_no == 1) continue;
    if (detail::trim(line).empty()) {
      if (pos >= text.size()) break;
      throw ParseError(source, line_no, "empty row");
    }
    const std::size_t comma = line.find(',');
    if (comma == std::string_view::npos || line.find(',', comma + 1) != std::string_view::npos) {
      throw ParseError(source, line_no, "expected two comma-separated columns 'sample,label'");
    }
    double sample = 0.0;
    if (!detail::parse_number(line.substr(0, comma), sample) || !std::isfinite(sample)) {
      throw ParseError(source, line_no, "sample is not a finite decimal number");
    }
    int label = 0;
    if (!detail::parse_number(line.substr(comma + 1), label)) {
      throw ParseError(source, line_no, "label is not an integer");
    }
    if (label < 0 || label > kMaxLabelCode) {
      throw ParseError(source, line_no, "label code " + std::to_string(label) + " outside 0-7");
    }
    record.signal.samples.push_back(sample);
    record.labels.push_back(label);
  }
  if (record.signal.samples.empty()) throw ParseError(source + ": record contains no samples");
  return record;
}

// The subject id is the file stem (`<subject_id>.csv`).
inline EcgRecord load_record(const std::filesystem::path& path, double sample_rate_hz = 700.0,
                             bool skip_header = false) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open record file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_record(buffer.str(), path.stem().string(), sample_rate_hz, path.string(),
                      skip_header);
}

// Windows start at 0, s, 2s, ...; a window is kept only when every sample
// carries the same target label code. Records shorter than one window yield
// nothing.
inline std::vector<Segment> segment_record(const EcgRecord& record, const SegmentationConfig& cfg) {
  const double fs = record.signal.sample_rate_hz;
  const std::size_t w = cfg.window_samples(fs);
  const std::size_t s = cfg.stride_samples(fs);
  const auto& x = record.signal.samples;
  const auto& labels = record.labels;
  if (labels.size() != x.size()) {
    throw DataError("record " + record.subject_id + " has mismatched sample and label counts");
  }
  std::vector<Segment> out;
  const std::size_t n = x.size();
  if (n < w) return out;

  // run_end[i]: one past the last index of the constant-label run holding i.
  std::vector<std::size_t> run_end(n);
  run_end[n - 1] = n;
  for (std::size_t i = n - 1; i-- > 0;) {
    run_end[i] = labels[i] == labels[i + 1] ? run_end[i + 1] : i + 1;
  }

  for (std::size_t start = 0; start + w <= n; start += s) {
    if (run_end[start] < start + w) continue;
    const auto label = label_from_code(labels[start]);
    if (!label) continue;
    Segment seg;
    seg.samples.assign(x.begin() + static_cast<std::ptrdiff_t>(start),
                       x.begin() + static_cast<std::ptrdiff_t>(start + w));
    seg.label = *label;
    seg.subject_id = record.subject_id;
    seg.start_index = start;
    out.push_back(std::move(seg));
  }
  return out;
}

inline std::vector<std::pair<Segment, std::size_t>> map_task_labels(std::vector<Segment> segments,
                                                                    TaskScheme scheme) {
  std::vector<std::pair<Segment, std::size_t>> out;
  out.reserve(segments.size());
  for (auto& seg : segments) {
    const std::size_t cls = class_index(seg.label, scheme);
    out.emplace_back(std::move(seg), cls);
  }
  return out;
}

}  // namespace sonic::ingest
