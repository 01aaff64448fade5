#pragma once

// Finite-difference checks for layers and classifiers.

#include <algorithm>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "sonic/fusion.hpp"
#include "sonic/nn.hpp"
#include "sonic/rng.hpp"
#include "support/oracles.hpp"

namespace gradcheck {

using sonic::Rng;
using sonic::nn::Layer;
using sonic::nn::Mode;
using sonic::nn::Parameter;
using sonic::nn::Tensor;

struct Report {
  double worst = 0.0;
  std::string worst_name;

  void add(const std::string& name, double err) {
    if (err > worst || worst_name.empty()) {
      worst = std::max(worst, err);
      worst_name = name;
    }
  }
};

// All coordinates when small, otherwise `limit` distinct random ones.
inline std::vector<std::size_t> pick_coords(std::size_t n, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (n <= limit) return all;
  rng.shuffle(std::span<std::size_t>(all));
  all.resize(limit);
  std::sort(all.begin(), all.end());
  return all;
}

template <typename T>
std::vector<double> gather(const std::vector<T>& v, const std::vector<std::size_t>& coords) {
  std::vector<double> out;
  for (std::size_t i : coords) out.push_back(static_cast<double>(v[i]));
  return out;
}

// Loss = sum(r * layer(x)) for a fixed random r. Train-mode layers draw from a
// generator reseeded on every call so dropout masks are identical across
// evaluations. Checks dL/dx and every parameter gradient.
inline Report check_layer(Layer<double>& layer, Tensor<double> x, std::uint64_t seed,
                          std::size_t max_coords = 400, double h = 1e-5) {
  Rng rng(seed);
  Tensor<double> probe = layer.infer(x);
  Tensor<double> r(probe.shape);
  for (double& v : r.data) v = rng.uniform(-1.0, 1.0);

  auto loss = [&] {
    Rng mask_rng(seed ^ 0xD20);
    const auto y = layer.forward(x, Mode::Train, mask_rng);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
    return s;
  };

  std::vector<Parameter<double>*> params;
  layer.collect_parameters(params);
  for (auto* p : params) p->grad.zero();
  (void)loss();
  const Tensor<double> gx = layer.backward(r);

  Report report;
  const auto xc = pick_coords(x.size(), max_coords, rng);
  report.add("input", oracle::norm_relative_error(gather(gx.data, xc),
                                                  oracle::finite_difference<double>(x.data, xc, loss, h)));
  for (auto* p : params) {
    const auto pc = pick_coords(p->size(), max_coords, rng);
    const auto analytic = gather(p->grad.data, pc);
    report.add(p->name, oracle::norm_relative_error(
                            analytic, oracle::finite_difference<double>(p->value.data, pc, loss, h)));
  }
  return report;
}

// Cross-entropy of a classifier on (x, labels); checks every named parameter.
// Biases are first moved off zero: with zero-initialised biases a unit fed only
// by dead ReLUs sits exactly on a kink, where central differences are biased.
template <typename T>
Report check_classifier(sonic::fusion::Classifier<T>& model, const Tensor<T>& x,
                        const std::vector<std::size_t>& labels, std::uint64_t seed, std::size_t max_coords,
                        double h) {
  {
    Rng bias_rng(seed ^ 0xB1A5);
    for (auto& [name, p] : model.named_parameters()) {
      if (name.ends_with(".bias"))
        for (T& v : p->value.data) v = static_cast<T>(bias_rng.uniform(-0.1, 0.1));
    }
  }
  const auto targets = sonic::nn::one_hot<T>(labels, model.classes());
  auto loss = [&] {
    Rng dropout_rng(seed);
    return sonic::nn::cross_entropy(model.forward(x, Mode::Train, dropout_rng).probabilities, targets);
  };
  {
    Rng dropout_rng(seed);
    const auto fwd = model.forward(x, Mode::Train, dropout_rng);
    model.backward(sonic::nn::cross_entropy_grad(fwd.probabilities, targets));
  }
  Rng rng(seed + 1);
  Report report;
  for (auto& [name, p] : model.named_parameters()) {
    const auto pc = pick_coords(p->size(), max_coords, rng);
    const auto analytic = gather(p->grad.data, pc);
    report.add(name, oracle::norm_relative_error(analytic,
                                                 oracle::finite_difference<T>(p->value.data, pc, loss, h)));
  }
  return report;
}

}  // namespace gradcheck
