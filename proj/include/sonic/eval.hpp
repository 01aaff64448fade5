#pragma once

// Confusion matrices, accuracy / macro-F1 and k-fold cross-validation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sonic/error.hpp"
#include "sonic/rng.hpp"

namespace sonic::eval {

// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t c = 0) : classes(c), counts(c * c, 0) {}

  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts[truth * classes + pred]; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * classes + pred]; }

  std::uint64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }
  std::uint64_t trace() const {
    std::uint64_t t = 0;
    for (std::size_t c = 0; c < classes; ++c) t += at(c, c);
    return t;
  }

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t t = 0; t < classes; ++t) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t p = 0; p < classes; ++p) row.push_back(at(t, p));
      rows.push_back(row);
    }
    return rows;
  }

  bool operator==(const ConfusionMatrix&) const = default;
};

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;
};

inline ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth,
                                        std::span<const std::size_t> predicted, std::size_t classes) {
  if (truth.empty()) throw InvalidArgument("confusion_matrix: no samples");
  if (truth.size() != predicted.size()) {
    throw InvalidArgument("confusion_matrix: " + std::to_string(truth.size()) + " labels vs " +
                          std::to_string(predicted.size()) + " predictions");
  }
  if (classes == 0) throw InvalidArgument("confusion_matrix: zero classes");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || predicted[i] >= classes) {
      throw InvalidArgument("confusion_matrix: label out of range at index " + std::to_string(i));
    }
    ++cm.at(truth[i], predicted[i]);
  }
  return cm;
}

// 0/0 in precision, recall or F1 counts as 0.
inline Metrics metrics(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (cm.classes == 0 || total == 0) throw InvalidArgument("metrics: empty confusion matrix");
  auto ratio = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };
  Metrics m;
  m.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  for (std::size_t c = 0; c < cm.classes; ++c) {
    double predicted = 0.0, actual = 0.0;
    for (std::size_t k = 0; k < cm.classes; ++k) {
      predicted += static_cast<double>(cm.at(k, c));
      actual += static_cast<double>(cm.at(c, k));
    }
    const double tp = static_cast<double>(cm.at(c, c));
    const double precision = ratio(tp, predicted);
    const double recall = ratio(tp, actual);
    m.per_class_f1.push_back(ratio(2.0 * precision * recall, precision + recall));
  }
  m.macro_f1 = std::accumulate(m.per_class_f1.begin(), m.per_class_f1.end(), 0.0) /
               static_cast<double>(cm.classes);
  return m;
}

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

struct FoldSplit {
  std::size_t k = 5;
  std::uint64_t seed = 0;
  std::vector<Fold> folds;
};

namespace detail {

inline FoldSplit finish_split(std::size_t n, std::size_t k, std::uint64_t seed,
                              const std::vector<std::size_t>& fold_of) {
  FoldSplit split;
  split.k = k;
  split.seed = seed;
  split.folds.resize(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < k; ++f) (f == fold_of[i] ? split.folds[f].test : split.folds[f].train).push_back(i);
  }
  return split;
}

}  // namespace detail

// Seeded shuffle within each class, then round-robin over folds. The
// round-robin cursor carries across classes so remainders spread over
// different folds.
inline FoldSplit stratified_kfold(std::span<const std::size_t> labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw InvalidArgument("cross-validation needs k >= 2");
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  for (const auto& [cls, members] : by_class) {
    if (members.size() < k) {
      throw DataError("class " + std::to_string(cls) + " has " + std::to_string(members.size()) +
                      " samples, fewer than the " + std::to_string(k) + " folds requested");
    }
  }
  std::vector<std::size_t> fold_of(labels.size());
  std::size_t cursor = 0;
  for (auto& [cls, members] : by_class) {
    Rng rng(derive_seed(seed, cls));
    rng.shuffle(std::span<std::size_t>(members));
    for (std::size_t idx : members) fold_of[idx] = cursor++ % k;
  }
  return detail::finish_split(labels.size(), k, seed, fold_of);
}

// Whole subjects per fold: subjects are shuffled and dealt round-robin.
inline FoldSplit group_kfold(std::span<const std::string> groups, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw InvalidArgument("cross-validation needs k >= 2");
  std::vector<std::string> unique(groups.begin(), groups.end());
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  if (unique.size() < k) {
    throw DataError("subject-grouped folds need at least " + std::to_string(k) + " subjects, found " +
                    std::to_string(unique.size()));
  }
  Rng rng(derive_seed(seed, 0x6770));
  rng.shuffle(std::span<std::string>(unique));
  std::map<std::string, std::size_t> fold_of_group;
  for (std::size_t i = 0; i < unique.size(); ++i) fold_of_group[unique[i]] = i % k;
  std::vector<std::size_t> fold_of(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) fold_of[i] = fold_of_group[groups[i]];
  return detail::finish_split(groups.size(), k, seed, fold_of);
}

struct FoldResult {
  std::size_t fold = 0;
  ConfusionMatrix confusion;
  Metrics metrics;
};

struct CrossValReport {
  std::vector<FoldResult> folds;
  double mean_accuracy = 0.0;
  double mean_macro_f1 = 0.0;
  double std_accuracy = 0.0;
  double std_macro_f1 = 0.0;
};

// Trains on fold.train and returns class predictions for fold.test, in order.
using FoldTrainer =
    std::function<std::vector<std::size_t>(std::size_t fold_index, const Fold& fold, std::uint64_t fold_seed)>;

inline std::uint64_t fold_seed(std::uint64_t master_seed, std::size_t fold_index) {
  return derive_seed(master_seed, 0xF0000 + fold_index);
}

inline double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Population standard deviation.
inline double std_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double mu = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - mu) * (x - mu);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

// Folds run sequentially; each gets an independent seed derived from the
// master seed and its index, so results do not depend on execution order.
inline CrossValReport run_crossval(std::span<const std::size_t> labels, std::size_t classes,
                                   const FoldSplit& split, std::uint64_t master_seed,
                                   const FoldTrainer& trainer) {
  CrossValReport report;
  std::vector<double> acc, f1;
  for (std::size_t f = 0; f < split.folds.size(); ++f) {
    const Fold& fold = split.folds[f];
    if (fold.test.empty() || fold.train.empty()) throw DataError("fold " + std::to_string(f) + " is empty");
    const auto predicted = trainer(f, fold, fold_seed(master_seed, f));
    std::vector<std::size_t> truth;
    truth.reserve(fold.test.size());
    for (std::size_t i : fold.test) truth.push_back(labels[i]);
    FoldResult r;
    r.fold = f;
    r.confusion = confusion_matrix(truth, predicted, classes);
    r.metrics = metrics(r.confusion);
    acc.push_back(r.metrics.accuracy);
    f1.push_back(r.metrics.macro_f1);
    report.folds.push_back(std::move(r));
  }
  report.mean_accuracy = mean_of(acc);
  report.mean_macro_f1 = mean_of(f1);
  report.std_accuracy = std_of(acc);
  report.std_macro_f1 = std_of(f1);
  return report;
}

inline nlohmann::json report_to_json(const CrossValReport& report, const std::string& task,
                                     const nlohmann::json& config_echo) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : report.folds) {
    folds.push_back({{"fold", f.fold},
                     {"accuracy", f.metrics.accuracy},
                     {"macro_f1", f.metrics.macro_f1},
                     {"confusion", f.confusion.to_json()}});
  }
  return {{"task", task},
          {"folds", folds},
          {"mean_accuracy", report.mean_accuracy},
          {"mean_macro_f1", report.mean_macro_f1},
          {"std_accuracy", report.std_accuracy},
          {"std_macro_f1", report.std_macro_f1},
          {"config_echo", config_echo}};
}

}  // namespace sonic::eval
