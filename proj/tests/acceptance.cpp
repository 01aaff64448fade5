// Acceptance checks. One criterion per invocation:
//
//   sonic_acceptance --criterion N [--workdir DIR]
//
// Prints one "CRITERION N PASS|FAIL ..." line and exits 0 on PASS.

#include <chrono>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "sonic/cli.hpp"
#include "sonic/dsp.hpp"
#include "sonic/eval.hpp"
#include "sonic/tensor_file.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace sonic;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<std::complex<double>> random_complex(std::size_t n, Rng& rng) {
  std::vector<std::complex<double>> x(n);
  for (auto& v : x) v = {rng.normal(), rng.normal()};
  return x;
}

Outcome fft_vs_dft() {
  Rng rng(1);
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t worst_n = 0;
  for (std::size_t n = 2; n <= 1024; n *= 2) {
    for (int trial = 0; trial < 20; ++trial) {
      const auto x = random_complex(n, rng);
      const double err = oracle::max_relative_error(dsp::fft(x), oracle::dft(x));
      if (err > worst) {
        worst = err;
        worst_n = n;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 5.0,
          fmt("max relative error %.3e (n=%zu), %.2f s; need <= 1e-9, < 5 s", worst, worst_n, secs)};
}

Outcome parseval() {
  Rng rng(2);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = std::size_t{1} << (1 + rng.below(12));
    const auto x = random_complex(n, rng);
    const auto X = dsp::fft(x);
    long double time = 0.0L, freq = 0.0L;
    for (const auto& v : x) time += std::norm(v);
    for (const auto& v : X) freq += std::norm(v);
    freq /= static_cast<long double>(n);
    worst = std::max(worst, static_cast<double>(std::abs(time - freq) / time));
  }
  return {worst <= 1e-9, fmt("max relative energy mismatch %.3e over 100 inputs; need <= 1e-9", worst)};
}

Outcome spectrogram_fixture() {
  const auto t0 = Clock::now();
  dsp::RealSignal signal{std::vector<double>(3500), 700.0};
  for (std::size_t n = 0; n < 3500; ++n) signal.samples[n] = std::cos(2.0 * std::numbers::pi * 175.0 * n / 700.0);
  const dsp::StftConfig cfg{256, 64, 256, dsp::WindowKind::Hann};
  const auto s = dsp::compute_spectrogram(signal, cfg);
  std::size_t off_bin = 0;
  for (std::size_t m = 0; m < s.frames; ++m) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < s.bins; ++k)
      if (s.at(m, k) > s.at(m, best)) best = k;
    off_bin += best != 64;
  }
  const double f64 = dsp::frequency_axis(256, 700.0)[64];
  const double secs = seconds_since(t0);
  const bool pass = off_bin == 0 && f64 == 175.0 && s.frames == 51 && s.bins == 129 && secs < 1.0;
  return {pass, fmt("shape %zux%zu, %zu frames off bin 64, axis[64]=%.17g, %.3f s", s.frames, s.bins, off_bin,
                    f64, secs)};
}

nn::Tensor<double> random_tensor(nn::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  nn::Tensor<double> t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

Outcome gradient_suite() {
  using namespace nn;
  const auto t0 = Clock::now();
  Rng rng(4);
  gradcheck::Report all;
  auto record = [&](const std::string& what, const gradcheck::Report& r) { all.add(what + "/" + r.worst_name, r.worst); };

  for (std::size_t co : {4, 8, 16, 32}) {
    Conv2D<double> conv(Conv2DSpec{co, 3, 2, 1}, {7, 6, 3}, rng);
    for (double& b : conv.bias().value.data) b = rng.uniform(-0.5, 0.5);
    record("conv" + std::to_string(co), gradcheck::check_layer(conv, random_tensor({2, 7, 6, 3}, rng), 40 + co));
  }
  {
    Conv2D<double> conv(Conv2DSpec{5, 2, 1, 0}, {5, 5, 2}, rng);
    record("conv5", gradcheck::check_layer(conv, random_tensor({2, 5, 5, 2}, rng), 45));
  }
  {
    Dense<double> d(DenseSpec{7}, {11}, rng);
    record("dense", gradcheck::check_layer(d, random_tensor({3, 11}, rng), 46));
  }
  {
    ReLU<double> relu({4, 4, 3});
    record("relu", gradcheck::check_layer(relu, random_tensor({2, 4, 4, 3}, rng), 47));
  }
  {
    GlobalAveragePool<double> gap({5, 3, 4});
    record("gap", gradcheck::check_layer(gap, random_tensor({2, 5, 3, 4}, rng), 48));
  }
  {
    Dropout<double> drop(DropoutSpec{0.3}, {20});
    record("dropout", gradcheck::check_layer(drop, random_tensor({3, 20}, rng), 49));
  }
  {
    Softmax<double> sm({4});
    record("softmax", gradcheck::check_layer(sm, random_tensor({3, 4}, rng, -2.0, 2.0), 50));
  }
  {
    ResidualBlock<double> res({4, 5, 3}, rng);
    record("residual", gradcheck::check_layer(res, random_tensor({2, 4, 5, 3}, rng), 51));
  }

  fusion::ModelSpec spec;
  spec.kind = fusion::ModelKind::Sonic;
  spec.classes = 3;
  spec.input_shape = {8, 8, 3};
  spec.init_seed = 11;
  fusion::SonicModel<double> model(spec);
  record("sonic", gradcheck::check_classifier<double>(model, random_tensor({4, 8, 8, 3}, rng, 0.0, 1.0),
                                                      {0, 1, 2, 1}, 77, 60, 1e-5));
  const double secs = seconds_since(t0);
  return {all.worst <= 1e-6 && secs < 60.0,
          fmt("worst relative error %.3e (%s), %.1f s; need <= 1e-6, < 60 s", all.worst, all.worst_name.c_str(), secs)};
}

Outcome adam_fixture() {
  nn::Parameter<double> p("theta", nn::Tensor<double>({1}, {0.0}));
  p.grad[0] = 1.0;
  nn::adam_step(p, nn::AdamConfig{});
  // m_hat = v_hat = 1 after bias correction: theta = -lr / (1 + eps).
  constexpr double kHand = -0.00099999999000000010;
  const double err = std::abs(p.value[0] - kHand);
  return {err <= 1e-12, fmt("theta %.20g, hand %.20g, |diff| %.3e", p.value[0], kHand, err)};
}

Outcome metrics_oracle() {
  Rng rng(6);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t classes = 2 + rng.below(2);
    const std::size_t n = 1 + rng.below(200);
    std::vector<std::size_t> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = rng.below(classes);
      p[i] = rng.below(classes);
    }
    const auto m = eval::metrics(eval::confusion_matrix(t, p, classes));
    const auto ref = oracle::brute_force_metrics(t, p, classes);
    worst = std::max({worst, std::abs(m.accuracy - ref.accuracy), std::abs(m.macro_f1 - ref.macro_f1)});
  }
  eval::ConfusionMatrix cm(2);
  cm.counts = {2, 1, 1, 2};
  const auto m = eval::metrics(cm);
  const bool fixture = std::abs(m.accuracy - 2.0 / 3.0) < 1e-12 && std::abs(m.macro_f1 - 2.0 / 3.0) < 1e-12;
  return {worst <= 1e-12 && fixture, fmt("max deviation %.3e over 1000 vectors; fixture acc %.4f F1 %.4f", worst,
                                         m.accuracy, m.macro_f1)};
}

template <typename T>
bool round_trip_bitwise(const fs::path& path, const nn::Tensor<T>& t) {
  io::write_tensor_file(path, t);
  const auto back = io::read_tensor_file_as<T>(path);
  return back.shape == t.shape && std::memcmp(back.data.data(), t.data.data(), t.size() * sizeof(T)) == 0;
}

Outcome tensor_round_trip(const fs::path& workdir) {
  const auto dir = workdir / "c10";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Rng rng(10);
  std::size_t ok = 0;
  for (int i = 0; i < 100; ++i) {
    nn::Shape shape(1 + rng.below(4));
    for (auto& d : shape) d = 1 + rng.below(9);
    const auto path = dir / ("t" + std::to_string(i) + ".spt");
    if (i % 2) {
      nn::Tensor<float> t(shape);
      for (auto& v : t.data) v = static_cast<float>(rng.normal() * 1e3);
      ok += round_trip_bitwise(path, t);
    } else {
      nn::Tensor<double> t(shape);
      for (auto& v : t.data) v = rng.normal() * 1e-3;
      ok += round_trip_bitwise(path, t);
    }
  }
  fs::remove_all(dir);
  return {ok == 100, fmt("%zu/100 tensors identical after write/read", ok)};
}

// ---------------------------------------------------------------------------
// End-to-end runs through the command-line front end.

int sonic_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "sonic");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream discard;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), std::cout, discard);
  if (code != 0) std::cerr << discard.str();
  return code;
}

struct RunResult {
  int code = 0;
  std::size_t segments = 0;
  fs::path metrics;
};

// synth -> segment -> spectrogram -> crossval for each mode, in `dir`.
std::vector<RunResult> synthetic_run(const fs::path& dir, std::size_t classes, std::uint64_t seed,
                                     const std::vector<std::string>& modes) {
  fs::remove_all(dir);
  const std::vector<std::string> common{"--data-dir",    (dir / "data").string(), "--output-dir", (dir / "out").string(),
                                        "--seed",        std::to_string(seed),    "--task",       std::to_string(classes) + "class"};
  auto with = [&](std::vector<std::string> a) {
    a.insert(a.end(), common.begin(), common.end());
    return a;
  };
  std::vector<RunResult> out;
  int code = sonic_cli(with({"synth", "--classes", std::to_string(classes), "--per-class", "300", "--subjects", "10",
                             "--noise", "0.3"}));
  if (code == 0) code = sonic_cli(with({"segment"}));
  if (code == 0) code = sonic_cli(with({"spectrogram"}));
  std::size_t segments = 0;
  if (code == 0) segments = pipeline::read_manifest(dir / "out" / "images" / "manifest.csv").size();
  for (const auto& mode : modes) {
    RunResult r;
    r.segments = segments;
    r.code = code == 0 ? sonic_cli(with({"crossval", "--mode", mode})) : code;
    r.metrics = dir / "out" / "crossval" / (mode + "_" + std::to_string(classes) + "class") / "metrics.json";
    out.push_back(r);
  }
  return out;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

constexpr std::uint64_t kEndToEndSeed = 42;

Outcome end_to_end(const fs::path& workdir) {
  const auto t0 = Clock::now();
  const auto r = synthetic_run(workdir / "c7", 2, kEndToEndSeed, {"sonic"}).front();
  const double secs = seconds_since(t0);
  if (r.code != 0) return {false, fmt("pipeline exited with %d", r.code)};
  const auto j = read_json(r.metrics);
  const double acc = j["mean_accuracy"], f1 = j["mean_macro_f1"];
  return {r.segments == 600 && acc >= 0.95 && f1 >= 0.95 && secs <= 900.0,
          fmt("%zu segments, mean accuracy %.4f, macro-F1 %.4f, %.0f s; need 600, >= 0.95, >= 0.95, <= 900 s",
              r.segments, acc, f1, secs)};
}

Outcome fusion_vs_single(const fs::path& workdir) {
  const std::vector<std::string> modes{"sonic", "plain", "residual"};
  std::vector<double> sum(3, 0.0);
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto runs = synthetic_run(workdir / ("c8_seed" + std::to_string(seed)), 3, seed, modes);
    per_seed += " seed" + std::to_string(seed) + "[";
    for (std::size_t m = 0; m < 3; ++m) {
      if (runs[m].code != 0) return {false, fmt("%s run exited with %d", modes[m].c_str(), runs[m].code)};
      if (runs[m].segments != 900) return {false, fmt("expected 900 segments, got %zu", runs[m].segments)};
      const double acc = read_json(runs[m].metrics)["mean_accuracy"];
      sum[m] += acc;
      per_seed += fmt("%s %.4f%s", modes[m].c_str(), acc, m < 2 ? " " : "]");
    }
    std::cout << "seed " << seed << " done" << std::endl;
  }
  for (auto& s : sum) s /= 3.0;
  const double bar = std::max(sum[1], sum[2]) - 0.02;
  return {sum[0] >= bar, fmt("mean accuracy sonic %.4f, plain %.4f, residual %.4f; need sonic >= %.4f;", sum[0],
                             sum[1], sum[2], bar) +
                             per_seed};
}

Outcome determinism(const fs::path& workdir) {
  const auto metrics = workdir / "c7" / "out" / "crossval" / "sonic_2class" / "metrics.json";
  if (!fs::exists(metrics)) {
    std::cout << "no earlier run in " << (workdir / "c7").string() << ", running it first" << std::endl;
    if (synthetic_run(workdir / "c7", 2, kEndToEndSeed, {"sonic"}).front().code != 0)
      return {false, "first run failed"};
  }
  const std::string first = read_bytes(metrics);
  const auto r = synthetic_run(workdir / "c7", 2, kEndToEndSeed, {"sonic"}).front();
  if (r.code != 0) return {false, fmt("repeat run exited with %d", r.code)};
  const std::string second = read_bytes(metrics);
  return {!first.empty() && first == second,
          fmt("metrics JSON %s (%zu vs %zu bytes)", first == second ? "byte-identical" : "differs", first.size(),
              second.size())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  int criterion = 0;
  std::string workdir = (fs::temp_directory_path() / "sonic_acceptance").string();
  app.add_option("--criterion", criterion, "Criterion number 1-10")->required()->check(CLI::Range(1, 10));
  app.add_option("--workdir", workdir, "Scratch directory for end-to-end runs");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(workdir);

  Outcome o;
  try {
    switch (criterion) {
      case 1: o = fft_vs_dft(); break;
      case 2: o = parseval(); break;
      case 3: o = spectrogram_fixture(); break;
      case 4: o = gradient_suite(); break;
      case 5: o = adam_fixture(); break;
      case 6: o = metrics_oracle(); break;
      case 7: o = end_to_end(workdir); break;
      case 8: o = fusion_vs_single(workdir); break;
      case 9: o = determinism(workdir); break;
      case 10: o = tensor_round_trip(workdir); break;
    }
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  std::cout << "CRITERION " << criterion << (o.pass ? " PASS " : " FAIL ") << o.detail << std::endl;
  return o.pass ? 0 : 1;
}
