#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bissm/autodiff.hpp"

namespace bissm {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

/// First and second moment estimates, one per parameter, plus the step count
/// used for bias correction.
struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::int64_t step = 0;

  static AdamState zeros_like(const ad::ParamStore& params) {
    AdamState s;
    for (const Tensor& v : params.values()) {
      s.first_moment.emplace_back(v.rows(), v.cols());
      s.second_moment.emplace_back(v.rows(), v.cols());
    }
    return s;
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update applied in place. `grads` must hold a
/// gradient for every parameter in the store.
inline void adam_step(ad::ParamStore& params, const ad::GradientMap& grads, AdamState& state,
                      const AdamConfig& cfg) {
  if (state.first_moment.size() != params.size()) state = AdamState::zeros_like(params);
  for (ad::ParamId id = 0; id < params.size(); ++id) {
    auto it = grads.find(id);
    if (it == grads.end()) {
      throw Error("adam_step: missing gradient for parameter '" + params.name(id) + "'");
    }
    if (!it->second.same_shape(params.value(id))) {
      throw ShapeError("adam_step: gradient shape " + it->second.shape_string() +
                       " does not match parameter '" + params.name(id) + "' " +
                       params.value(id).shape_string());
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (ad::ParamId id = 0; id < params.size(); ++id) {
    const Tensor& g = grads.at(id);
    Tensor& w = params.value(id);
    Tensor& m = state.first_moment[id];
    Tensor& v = state.second_moment[id];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

}  // namespace bissm
