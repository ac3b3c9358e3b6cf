#pragma once

#include <cstdint>

#include "zimm/param_store.hpp"

namespace zimm {

/// Nadam hyper-parameters. Moment constants are the usual Adam defaults.
struct NadamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct NadamState {
  NadamConfig config;
  std::uint64_t step = 0;
  Gradients m;  // first moments
  Gradients v;  // second moments
};

NadamState nadam_init(const ParamStore& params, const NadamConfig& config);

/// One Nesterov-accelerated Adam update (constant momentum schedule):
///   g' = g + decay * w
///   m  = b1 m + (1-b1) g'          v = b2 v + (1-b2) g'^2
///   m^ = b1 m / (1-b1^(t+1)) + (1-b1) g' / (1-b1^t)
///   w -= lr m^ / (sqrt(v / (1-b2^t)) + eps)
/// Every parameter must have a gradient entry of matching shape.
void nadam_step(ParamStore& params, const Gradients& grads, NadamState& state);

}  // namespace zimm
