#pragma once

// Pipeline configuration: a `key = value` text file with optional
// `[section]` headers, `#` comments, and CLI flag overrides on top.
//
//   seed = 42
//   task = 2class
//   [stft]
//   window_len = 256

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sonic/dsp.hpp"
#include "sonic/error.hpp"
#include "sonic/fusion.hpp"
#include "sonic/image.hpp"
#include "sonic/ingest.hpp"

namespace sonic::config {

struct PipelineConfig {
  std::filesystem::path data_dir = "data";
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 42;
  double sample_rate_hz = 700.0;
  bool header = false;
  ingest::SegmentationConfig segmentation;
  dsp::StftConfig stft;
  image::NormalizeMode normalize = image::NormalizeMode::LogMinMax;
  ingest::TaskScheme task = ingest::TaskScheme::TwoClass;
  fusion::ModelKind mode = fusion::ModelKind::Sonic;
  fusion::TrainConfig train;
  double dropout = fusion::kDefaultDropout;
  std::size_t folds = 5;
  bool group_by_subject = false;

  // Raw file text and CLI overrides, kept for the metrics echo.
  std::string source_text;
  std::vector<std::string> overrides;

  void validate() const;
  nlohmann::json effective() const;
  nlohmann::json echo() const { return {{"file", source_text}, {"overrides", overrides}, {"effective", effective()}}; }
};

namespace detail {

template <typename T>
T parse_value(std::string_view key, std::string_view text) {
  T out{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(text) + "'");
  }
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected true or false, got '" + std::string(text) + "'");
}

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

// Rethrows enum-parse failures as configuration errors.
template <typename F>
auto as_config(std::string_view key, F&& f) {
  try {
    return f();
  } catch (const InvalidArgument& e) {
    throw ConfigError("config key '" + std::string(key) + "': " + e.what());
  }
}

}  // namespace detail

// Applies one `section.key = value` setting. Unknown keys are rejected.
inline void set_value(PipelineConfig& c, const std::string& key, std::string_view value) {
  using detail::parse_bool;
  using detail::parse_value;
  if (key == "seed") c.seed = parse_value<std::uint64_t>(key, value);
  else if (key == "task") c.task = detail::as_config(key, [&] { return ingest::parse_task(value); });
  else if (key == "mode") c.mode = detail::as_config(key, [&] { return fusion::parse_model_kind(value); });
  else if (key == "paths.data_dir") c.data_dir = std::string(value);
  else if (key == "paths.output_dir") c.output_dir = std::string(value);
  else if (key == "ingest.sample_rate_hz") c.sample_rate_hz = parse_value<double>(key, value);
  else if (key == "ingest.header") c.header = parse_bool(key, value);
  else if (key == "segmentation.window_seconds") c.segmentation.window_seconds = parse_value<double>(key, value);
  else if (key == "segmentation.stride_seconds") c.segmentation.stride_seconds = parse_value<double>(key, value);
  else if (key == "stft.window_len") c.stft.window_len = parse_value<std::size_t>(key, value);
  else if (key == "stft.hop") c.stft.hop = parse_value<std::size_t>(key, value);
  else if (key == "stft.nfft") c.stft.nfft = parse_value<std::size_t>(key, value);
  else if (key == "stft.window") c.stft.window = detail::as_config(key, [&] { return dsp::parse_window_kind(value); });
  else if (key == "image.normalize") c.normalize = detail::as_config(key, [&] { return image::parse_normalize_mode(value); });
  else if (key == "train.epochs") c.train.epochs = parse_value<std::size_t>(key, value);
  else if (key == "train.batch_size") c.train.batch_size = parse_value<std::size_t>(key, value);
  else if (key == "train.learning_rate") c.train.adam.learning_rate = parse_value<double>(key, value);
  else if (key == "train.beta1") c.train.adam.beta1 = parse_value<double>(key, value);
  else if (key == "train.beta2") c.train.adam.beta2 = parse_value<double>(key, value);
  else if (key == "train.epsilon") c.train.adam.epsilon = parse_value<double>(key, value);
  else if (key == "train.dropout") c.dropout = parse_value<double>(key, value);
  else if (key == "eval.folds") c.folds = parse_value<std::size_t>(key, value);
  else if (key == "eval.group_by_subject") c.group_by_subject = parse_bool(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

inline PipelineConfig parse_config(std::string_view text, const std::string& source = "config") {
  PipelineConfig c;
  c.source_text = std::string(text);
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto where = [&] { return source + ":" + std::to_string(line_no) + ": "; };
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where() + "unterminated section header");
      section = std::string(detail::trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where() + "expected 'key = value'");
    const std::string key(detail::trim(line.substr(0, eq)));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where() + "empty key");
    try {
      set_value(c, section.empty() ? key : section + "." + key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where() + e.what());
    }
  }
  return c;
}

// Applies a `section.key=value` override and records it for the echo.
inline void apply_override(PipelineConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set_value(c, std::string(detail::trim(std::string_view(assignment).substr(0, eq))),
            detail::trim(std::string_view(assignment).substr(eq + 1)));
  c.overrides.push_back(assignment);
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

inline void PipelineConfig::validate() const {
  auto check = [](auto&& f) {
    try {
      f();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  };
  if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz)) throw ConfigError("sample_rate_hz must be positive");
  check([&] { segmentation.validate(sample_rate_hz); });
  check([&] { stft.validate(); });
  if (stft.window_len > segmentation.window_samples(sample_rate_hz)) {
    throw ConfigError("stft.window_len exceeds the segment length");
  }
  check([&] { train.validate(); });
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("train.dropout must lie in [0, 1)");
  if (folds < 2) throw ConfigError("eval.folds must be >= 2");
}

inline nlohmann::json PipelineConfig::effective() const {
  return {{"seed", seed},
          {"task", std::string(ingest::to_string(task))},
          {"mode", std::string(fusion::to_string(mode))},
          {"paths", {{"data_dir", data_dir.generic_string()}, {"output_dir", output_dir.generic_string()}}},
          {"ingest", {{"sample_rate_hz", sample_rate_hz}, {"header", header}}},
          {"segmentation",
           {{"window_seconds", segmentation.window_seconds}, {"stride_seconds", segmentation.stride_seconds}}},
          {"stft",
           {{"window_len", stft.window_len},
            {"hop", stft.hop},
            {"nfft", stft.nfft},
            {"window", std::string(dsp::to_string(stft.window))}}},
          {"image", {{"normalize", std::string(image::to_string(normalize))}}},
          {"train",
           {{"epochs", train.epochs},
            {"batch_size", train.batch_size},
            {"learning_rate", train.adam.learning_rate},
            {"beta1", train.adam.beta1},
            {"beta2", train.adam.beta2},
            {"epsilon", train.adam.epsilon},
            {"dropout", dropout}}},
          {"eval", {{"folds", folds}, {"group_by_subject", group_by_subject}}}};
}

}  // namespace sonic::config
