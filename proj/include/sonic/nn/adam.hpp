#pragma once

#include <cmath>
#include <cstddef>

#include "sonic/error.hpp"
#include "sonic/nn/tensor.hpp"

namespace sonic::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("adam learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw InvalidArgument("adam beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw InvalidArgument("adam beta2 must be in [0, 1)");
    if (!(epsilon > 0.0)) throw InvalidArgument("adam epsilon must be > 0");
  }
};

// One bias-corrected Adam update of `param` from its current gradient.
template <typename T>
void adam_step(Parameter<T>& param, const AdamConfig& cfg) {
  ++param.step_count;
  const double t = static_cast<double>(param.step_count);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(param.grad[i]);
    const double m = cfg.beta1 * static_cast<double>(param.adam_m[i]) + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * static_cast<double>(param.adam_v[i]) + (1.0 - cfg.beta2) * g * g;
    param.adam_m[i] = static_cast<T>(m);
    param.adam_v[i] = static_cast<T>(v);
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    param.value[i] = static_cast<T>(static_cast<double>(param.value[i]) -
                                    cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
  }
}

}  // namespace sonic::nn
