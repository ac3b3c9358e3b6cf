#include "zimm/nadam.hpp"

#include <cmath>
#include <stdexcept>

namespace zimm {

NadamState nadam_init(const ParamStore& params, const NadamConfig& config) {
  NadamState s;
  s.config = config;
  s.m = zero_gradients(params);
  s.v = zero_gradients(params);
  return s;
}

void nadam_step(ParamStore& params, const Gradients& grads, NadamState& state) {
  const NadamConfig& c = state.config;
  for (const auto& [name, _] : params.entries()) {
    if (!grads.count(name)) throw std::invalid_argument("nadam_step: missing gradient for " + name);
    if (!state.m.count(name)) throw std::invalid_argument("nadam_step: no optimizer state for " + name);
  }
  const double t = static_cast<double>(state.step + 1);
  const double bias1_now = 1.0 - std::pow(c.beta1, t);
  const double bias1_next = 1.0 - std::pow(c.beta1, t + 1.0);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  for (auto& [name, entry] : params.entries()) {
    const Tensor& g = grads.at(name);
    Tensor& w = entry.value;
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    if (!g.same_shape(w) || !m.same_shape(w)) {
      throw ShapeError("nadam_step: shape mismatch for " + name);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] + entry.decay * w[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      const double m_hat = c.beta1 * m[i] / bias1_next + (1.0 - c.beta1) * gi / bias1_now;
      const double v_hat = v[i] / bias2;
      w[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
  ++state.step;
}

}  // namespace zimm
