#pragma once

// `sonic` command-line front end.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical or
// internal runtime error.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sonic/config.hpp"
#include "sonic/error.hpp"
#include "sonic/pipeline.hpp"
#include "sonic/synth.hpp"

namespace sonic::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kDataError = 3, kRuntimeError = 4 };

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> task;
  std::optional<std::string> mode;
  bool group_by_subject = false;
  bool header = false;
  std::optional<std::string> data_dir;
  std::optional<std::string> output_dir;
  std::vector<std::string> sets;

  void attach(CLI::App& app) {
    app.add_option("--config", config_path, "Config file (key = value)");
    app.add_option("--seed", seed, "Master seed");
    app.add_option("--task", task, "2class or 3class");
    app.add_option("--mode", mode, "sonic, plain or residual");
    app.add_flag("--group-by-subject", group_by_subject, "Keep each subject within one fold");
    app.add_flag("--header", header, "Record CSVs start with a header line");
    app.add_option("--data-dir", data_dir, "Directory of record CSVs");
    app.add_option("--output-dir", output_dir, "Directory for pipeline artifacts");
    app.add_option("--set", sets, "Override any config key: section.key=value");
  }

  config::PipelineConfig resolve() const {
    auto c = config_path.empty() ? config::PipelineConfig{} : config::load_config(config_path);
    if (seed) config::apply_override(c, "seed=" + std::to_string(*seed));
    if (task) config::apply_override(c, "task=" + *task);
    if (mode) config::apply_override(c, "mode=" + *mode);
    if (group_by_subject) config::apply_override(c, "eval.group_by_subject=true");
    if (header) config::apply_override(c, "ingest.header=true");
    if (data_dir) config::apply_override(c, "paths.data_dir=" + *data_dir);
    if (output_dir) config::apply_override(c, "paths.output_dir=" + *output_dir);
    for (const auto& s : sets) config::apply_override(c, s);
    c.validate();
    return c;
  }
};

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spectrogram fusion classifier pipeline"};
  app.require_subcommand(1);

  CommonOptions common;
  auto* segment = app.add_subcommand("segment", "Segment record CSVs into labeled windows");
  auto* spectrogram = app.add_subcommand("spectrogram", "Turn segments into 224x224x3 images");
  auto* crossval = app.add_subcommand("crossval", "k-fold train/evaluate and write metrics JSON");
  auto* export_repr = app.add_subcommand("export-repr", "Export penultimate-layer features");
  auto* synth = app.add_subcommand("synth", "Write synthetic tone records into the data directory");
  for (auto* sub : {segment, spectrogram, crossval, export_repr, synth}) common.attach(*sub);

  std::vector<std::string> report_files;
  auto* report = app.add_subcommand("report", "Tabulate metrics JSON files");
  report->add_option("files", report_files, "metrics.json files")->required();

  std::string checkpoint_dir, repr_output;
  export_repr->add_option("--checkpoint", checkpoint_dir, "Checkpoint directory")->required();
  export_repr->add_option("--output", repr_output, "Output tensor file");

  synth::SynthConfig sc;
  std::size_t synth_classes = 2;
  synth->add_option("--classes", synth_classes, "2 (5/15 Hz) or 3 (5/15/25 Hz)")->check(CLI::Range(2, 3));
  synth->add_option("--per-class", sc.segments_per_class, "Segments per class");
  synth->add_option("--subjects", sc.subjects, "Number of record files");
  synth->add_option("--noise", sc.noise_sigma, "Noise standard deviation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kConfigError;
  }

  try {
    if (*report) {
      std::vector<std::filesystem::path> paths(report_files.begin(), report_files.end());
      out << pipeline::cmd_report(paths);
      return kOk;
    }
    const auto cfg = common.resolve();
    if (*synth) {
      sc.tone_hz = synth_classes == 2 ? std::vector<double>{5.0, 15.0} : std::vector<double>{5.0, 15.0, 25.0};
      sc.sample_rate_hz = cfg.sample_rate_hz;
      sc.segmentation = cfg.segmentation;
      sc.seed = cfg.seed;
      try {
        sc.validate();
      } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
      }
      synth::write_records(cfg.data_dir, synth::synthesize_records(sc), cfg.header);
      out << "wrote " << sc.subjects << " records to " << cfg.data_dir.string() << '\n';
    } else if (*segment) {
      const auto s = pipeline::cmd_segment(cfg);
      out << "segmented " << s.inputs << " records into " << s.outputs << " segments\n";
    } else if (*spectrogram) {
      const auto s = pipeline::cmd_spectrogram(cfg);
      out << "prepared " << s.outputs << " images\n";
    } else if (*crossval) {
      const auto r = pipeline::cmd_crossval(cfg, &err);
      for (const auto& f : r.report.folds) {
        char line[96];
        std::snprintf(line, sizeof line, "fold %zu accuracy %.2f%% macro-F1 %.2f%%\n", f.fold,
                      100.0 * f.metrics.accuracy, 100.0 * f.metrics.macro_f1);
        out << line;
      }
      out << "mean accuracy " << r.report.mean_accuracy << " macro-F1 " << r.report.mean_macro_f1 << '\n'
          << "wrote " << r.metrics_path.string() << '\n';
    } else if (*export_repr) {
      const auto path = pipeline::cmd_export_repr(cfg, checkpoint_dir, repr_output);
      out << "wrote " << path.string() << '\n';
    }
    return kOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const InvalidArgument& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kRuntimeError;
  }
}

}  // namespace sonic::cli
