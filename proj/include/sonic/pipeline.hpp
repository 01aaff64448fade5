#pragma once

// Pipeline stages behind the CLI. Everything lands under the configured
// output directory:
//
//   segments/manifest.csv, segments/<subject>_<start>.spt   f64 [window]
//   images/manifest.csv,   images/<subject>_<start>.spt     f32 [224, 224, 3]
//   crossval/<mode>_<task>/metrics.json, fold<k>/           per-fold checkpoints
//   repr/<mode>_<task>.spt                                  penultimate features

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sonic/checkpoint.hpp"
#include "sonic/config.hpp"
#include "sonic/dsp.hpp"
#include "sonic/error.hpp"
#include "sonic/eval.hpp"
#include "sonic/fusion.hpp"
#include "sonic/image.hpp"
#include "sonic/ingest.hpp"
#include "sonic/tensor_file.hpp"

namespace sonic::pipeline {

namespace fs = std::filesystem;

struct ManifestRow {
  std::string subject;
  std::size_t start = 0;
  int label = 0;
  std::string file;
};

inline constexpr const char* kManifestHeader = "subject,start,label,file";

inline fs::path segments_dir(const config::PipelineConfig& c) { return c.output_dir / "segments"; }
inline fs::path images_dir(const config::PipelineConfig& c) { return c.output_dir / "images"; }
inline fs::path crossval_dir(const config::PipelineConfig& c) {
  return c.output_dir / "crossval" /
         (std::string(fusion::to_string(c.mode)) + "_" + std::string(ingest::to_string(c.task)));
}

inline void write_manifest(const fs::path& path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << kManifestHeader << '\n';
  for (const auto& r : rows) out << r.subject << ',' << r.start << ',' << r.label << ',' << r.file << '\n';
}

inline std::vector<ManifestRow> read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest " + path.string() + " (run the previous stage first)");
  std::vector<ManifestRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != kManifestHeader) throw ParseError(path.string(), line_no, "unexpected manifest header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string col; std::getline(ss, col, ',');) cols.push_back(col);
    if (cols.size() != 4) throw ParseError(path.string(), line_no, "expected 4 columns");
    ManifestRow r{cols[0], 0, 0, cols[3]};
    auto parse = [&](const std::string& s, auto& out) {
      const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
      if (ec != std::errc{} || p != s.data() + s.size()) throw ParseError(path.string(), line_no, "bad number '" + s + "'");
    };
    parse(cols[1], r.start);
    parse(cols[2], r.label);
    rows.push_back(std::move(r));
  }
  return rows;
}

// Removes the files a previous run of a stage left behind.
inline void reset_stage_dir(const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".spt" || entry.path().filename() == "manifest.csv")) {
      fs::remove(entry.path());
    }
  }
}

inline std::vector<fs::path> record_files(const fs::path& data_dir) {
  if (!fs::is_directory(data_dir)) throw DataError("data directory " + data_dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(data_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  if (files.empty()) throw DataError("no record CSV files in " + data_dir.string());
  std::sort(files.begin(), files.end());
  return files;
}

struct StageSummary {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
};

inline StageSummary cmd_segment(const config::PipelineConfig& c) {
  c.validate();
  const auto files = record_files(c.data_dir);
  const auto dir = segments_dir(c);
  reset_stage_dir(dir);
  std::vector<ManifestRow> rows;
  for (const auto& path : files) {
    const auto record = ingest::load_record(path, c.sample_rate_hz, c.header);
    for (auto& seg : ingest::segment_record(record, c.segmentation)) {
      ManifestRow row{seg.subject_id, seg.start_index, ingest::code_of(seg.label),
                      seg.subject_id + "_" + std::to_string(seg.start_index) + ".spt"};
      const std::size_t n = seg.samples.size();
      io::write_tensor_file(dir / row.file, nn::Tensor<double>({n}, std::move(seg.samples)));
      rows.push_back(std::move(row));
    }
  }
  write_manifest(dir / "manifest.csv", rows);
  return {files.size(), rows.size()};
}

inline StageSummary cmd_spectrogram(const config::PipelineConfig& c) {
  c.validate();
  const auto in_dir = segments_dir(c);
  const auto rows = read_manifest(in_dir / "manifest.csv");
  const auto out_dir = images_dir(c);
  reset_stage_dir(out_dir);
  for (const auto& row : rows) {
    auto seg = io::read_tensor_file_as<double>(in_dir / row.file);
    const dsp::RealSignal signal{std::move(seg.data), c.sample_rate_hz};
    const auto img = image::prepare_image(dsp::compute_spectrogram(signal, c.stft), c.normalize);
    io::write_tensor_file(out_dir / row.file,
                          nn::Tensor<float>({img.height, img.width, img.channels}, img.values));
  }
  write_manifest(out_dir / "manifest.csv", rows);
  return {rows.size(), rows.size()};
}

struct Dataset {
  std::vector<ManifestRow> rows;
  std::vector<image::ImageTensor> images;
  std::vector<std::size_t> labels;  // task class indices
};

inline Dataset load_images(const config::PipelineConfig& c) {
  const auto dir = images_dir(c);
  Dataset d;
  d.rows = read_manifest(dir / "manifest.csv");
  if (d.rows.empty()) throw DataError("image manifest in " + dir.string() + " lists no images");
  for (const auto& row : d.rows) {
    const auto label = ingest::label_from_code(row.label);
    if (!label) throw DataError("manifest row " + row.file + " has non-target label " + std::to_string(row.label));
    auto t = io::read_tensor_file_as<float>(dir / row.file);
    if (t.rank() != 3) throw DataError(row.file + ": expected a rank-3 image tensor");
    d.images.push_back({t.shape[0], t.shape[1], t.shape[2], std::move(t.data)});
    d.labels.push_back(ingest::class_index(*label, c.task));
  }
  return d;
}

inline fusion::ModelSpec model_spec(const config::PipelineConfig& c, const Dataset& d, std::uint64_t init_seed) {
  fusion::ModelSpec spec;
  spec.kind = c.mode;
  spec.classes = ingest::class_count(c.task);
  const auto& first = d.images.front();
  spec.input_shape = {first.height, first.width, first.channels};
  spec.dropout = c.dropout;
  spec.init_seed = init_seed;
  return spec;
}

struct CrossValOutcome {
  eval::CrossValReport report;
  nlohmann::json metrics;
  fs::path metrics_path;
};

// Trains one model per fold, checkpoints it, and writes metrics.json.
// `log` receives per-epoch progress when non-null.
inline CrossValOutcome cmd_crossval(const config::PipelineConfig& c, std::ostream* log = nullptr) {
  c.validate();
  const Dataset d = load_images(c);
  const std::size_t classes = ingest::class_count(c.task);

  const std::uint64_t split_seed = derive_seed(c.seed, 0x5B17);
  eval::FoldSplit split;
  if (c.group_by_subject) {
    std::vector<std::string> groups;
    for (const auto& r : d.rows) groups.push_back(r.subject);
    split = eval::group_kfold(groups, c.folds, split_seed);
  } else {
    split = eval::stratified_kfold(d.labels, c.folds, split_seed);
  }

  const auto out_dir = crossval_dir(c);
  fs::create_directories(out_dir);
  auto trainer = [&](std::size_t k, const eval::Fold& fold, std::uint64_t seed) {
    auto model = fusion::make_classifier<float>(model_spec(c, d, derive_seed(seed, 1)));
    fusion::TrainConfig tc = c.train;
    tc.seed = derive_seed(seed, 2);
    fusion::train<float>(*model, d.images, d.labels, fold.train, tc, [&](std::size_t epoch, double loss) {
      if (log) *log << "fold " << k << " epoch " << epoch + 1 << "/" << tc.epochs << " loss " << loss << '\n';
    });
    checkpoint::save(out_dir / ("fold" + std::to_string(k)), *model,
                     {{"fold", k}, {"task", std::string(ingest::to_string(c.task))}});
    return fusion::argmax_rows(fusion::predict<float>(*model, d.images, fold.test).probabilities);
  };

  CrossValOutcome out;
  out.report = eval::run_crossval(d.labels, classes, split, c.seed, trainer);
  out.metrics = eval::report_to_json(out.report, std::string(ingest::to_string(c.task)), c.echo());
  out.metrics_path = out_dir / "metrics.json";
  std::ofstream f(out.metrics_path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + out.metrics_path.string());
  f << out.metrics.dump(2) << '\n';
  return out;
}

// Penultimate features for every image, in manifest order.
inline fs::path cmd_export_repr(const config::PipelineConfig& c, const fs::path& checkpoint_dir,
                                fs::path output = {}) {
  c.validate();
  const Dataset d = load_images(c);
  const auto model = checkpoint::load<float>(checkpoint_dir);
  if (model->classes() != ingest::class_count(c.task)) {
    throw ConfigError("checkpoint has " + std::to_string(model->classes()) + " classes but the task has " +
                      std::to_string(ingest::class_count(c.task)));
  }
  if (output.empty()) {
    output = c.output_dir / "repr" /
             (std::string(fusion::to_string(model->spec().kind)) + "_" + std::string(ingest::to_string(c.task)) + ".spt");
  }
  if (output.has_parent_path()) fs::create_directories(output.parent_path());
  io::write_tensor_file(output, fusion::export_penultimate(*model, d.images));
  return output;
}

// ---------------------------------------------------------------------------
// Report table.

struct ReportRow {
  std::string model;
  std::optional<double> acc2, f12, acc3, f13;
};

inline ReportRow report_row(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open metrics file " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    ReportRow row;
    row.model = path.parent_path().filename().string();
    if (const auto* echo = j.contains("config_echo") ? &j.at("config_echo") : nullptr;
        echo && echo->contains("effective") && echo->at("effective").contains("mode")) {
      row.model = echo->at("effective").at("mode").get<std::string>();
    }
    const auto task = j.at("task").get<std::string>();
    const double acc = j.at("mean_accuracy").get<double>() * 100.0;
    const double f1 = j.at("mean_macro_f1").get<double>() * 100.0;
    if (task == "2class") {
      row.acc2 = acc;
      row.f12 = f1;
    } else if (task == "3class") {
      row.acc3 = acc;
      row.f13 = f1;
    } else {
      throw DataError(path.string() + ": unknown task '" + task + "'");
    }
    return row;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid metrics JSON " + path.string() + ": " + e.what());
  }
}

// One row per metrics file, sorted by 2-class accuracy ascending; rows
// without a 2-class score go last.
inline std::string cmd_report(const std::vector<fs::path>& paths) {
  if (paths.empty()) throw ConfigError("report needs at least one metrics JSON");
  std::vector<ReportRow> rows;
  for (const auto& p : paths) rows.push_back(report_row(p));
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    if (a.acc2.has_value() != b.acc2.has_value()) return a.acc2.has_value();
    return a.acc2.has_value() && *a.acc2 < *b.acc2;
  });
  std::size_t width = 5;
  for (const auto& r : rows) width = std::max(width, r.model.size());
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *v);
    return std::string(buf);
  };
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "Model" << std::right;
  for (const char* h : {"A(2)", "F(2)", "A(3)", "F(3)"}) os << std::setw(9) << h;
  os << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(width)) << r.model << std::right;
    for (const auto* v : {&r.acc2, &r.f12, &r.acc3, &r.f13}) os << std::setw(9) << cell(*v);
    os << '\n';
  }
  return os.str();
}

}  // namespace sonic::pipeline
