#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "sonic/error.hpp"
#include "sonic/nn/tensor.hpp"

namespace sonic::nn {

inline constexpr double kProbabilityFloor = 1e-12;

namespace detail {

template <typename T>
void check_loss_inputs(const Tensor<T>& probs, const Tensor<T>& targets) {
  if (probs.rank() != 2 || probs.shape != targets.shape || probs.shape[0] == 0) {
    throw ShapeError("cross_entropy: probabilities " + shape_string(probs.shape) +
                     " and targets " + shape_string(targets.shape) + " must be equal [batch, C]");
  }
}

}  // namespace detail

// Batch mean of -sum_c y_c log(max(p_c, 1e-12)).
template <typename T>
double cross_entropy(const Tensor<T>& probs, const Tensor<T>& one_hot) {
  detail::check_loss_inputs(probs, one_hot);
  const std::size_t batch = probs.shape[0];
  const std::size_t c_n = probs.shape[1];
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    double row_sum = 0.0;
    for (std::size_t c = 0; c < c_n; ++c) row_sum += static_cast<double>(probs[b * c_n + c]);
    if (std::abs(row_sum - 1.0) > 1e-6) {
      throw NumericalError("cross_entropy: probability row " + std::to_string(b) + " sums to " +
                           std::to_string(row_sum));
    }
    for (std::size_t c = 0; c < c_n; ++c) {
      const double y = static_cast<double>(one_hot[b * c_n + c]);
      if (y != 0.0) {
        total -= y * std::log(std::max(static_cast<double>(probs[b * c_n + c]), kProbabilityFloor));
      }
    }
  }
  return total / static_cast<double>(batch);
}

// d(cross_entropy)/d(probs). Clamped entries get zero gradient.
template <typename T>
Tensor<T> cross_entropy_grad(const Tensor<T>& probs, const Tensor<T>& one_hot) {
  detail::check_loss_inputs(probs, one_hot);
  const double inv_batch = 1.0 / static_cast<double>(probs.shape[0]);
  Tensor<T> grad(probs.shape);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = static_cast<double>(probs[i]);
    const double y = static_cast<double>(one_hot[i]);
    grad[i] = p > kProbabilityFloor ? static_cast<T>(-y / p * inv_batch) : T{};
  }
  return grad;
}

template <typename T>
Tensor<T> one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  Tensor<T> t({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw InvalidArgument("label " + std::to_string(labels[i]) + " outside 0.." +
                            std::to_string(classes - 1));
    }
    t[i * classes + labels[i]] = T{1};
  }
  return t;
}

}  // namespace sonic::nn
