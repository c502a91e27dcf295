// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#include "faclstm/optim.hpp"

#include <cmath>

#include "faclstm/errors.hpp"

namespace facl {

void adam_step(NamedTensors& params, const NamedTensors& grads, AdamState& state, double lr,
               const AdamConfig& cfg) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ValidationError("gradient for unknown parameter " + name);
    if (!g.same_shape(it->second)) {
      throw ShapeError("gradient for " + name + " is " + g.shape_str() + ", parameter is " +
                       it->second.shape_str());
    }
    if (!g.all_finite()) throw NumericError("non-finite gradient for parameter " + name);
  }

  const int64_t t = state.step + 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& [name, p] : params) {
    auto [mit, m_new] = state.first_moment.try_emplace(name, p.dims());
    auto [vit, v_new] = state.second_moment.try_emplace(name, p.dims());
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    if (!m.same_shape(p) || !v.same_shape(p)) {
      throw ShapeError("optimizer state for " + name + " does not match parameter " + p.shape_str());
    }
    auto git = grads.find(name);
    const Tensor* g = git == grads.end() ? nullptr : &git->second;
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
  state.step = t;
}

}  // namespace facl
