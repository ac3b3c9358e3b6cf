#pragma once

#include <functional>
#include <string>
#include <vector>

#include "zimm/param_store.hpp"

namespace zimm {

using ScalarFn = std::function<double(const ParamStore&)>;

/// Central-difference gradient of `f` at `params`, one coordinate at a time.
/// `f` must be deterministic. When `names` is non-empty only those entries
/// are differentiated.
Gradients finite_diff_grad(const ScalarFn& f, const ParamStore& params, double step,
                           const std::vector<std::string>& names = {});

/// |a - b| / max(|a|, |b|, floor). The floor keeps coordinates whose true
/// gradient is ~0 from turning round-off into huge ratios.
double relative_error(double a, double b, double floor = 1e-3);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

/// Compares two gradient maps over the keys of `numeric`.
GradCheckResult compare_gradients(const Gradients& analytic, const Gradients& numeric,
                                  double floor = 1e-3);

}  // namespace zimm
