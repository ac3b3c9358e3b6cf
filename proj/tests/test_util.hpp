#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "zimm/autodiff.hpp"
#include "zimm/gradcheck.hpp"
#include "zimm/param_store.hpp"
#include "zimm/rng.hpp"

namespace zimm::testing {

inline std::filesystem::path fixture_dir() { return ZIMM_FIXTURE_DIR; }
inline std::filesystem::path oracle_dir() { return ZIMM_ORACLE_DIR; }

inline Tensor random_tensor(Shape shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Builds a scalar from the named leaves of `store` on a tape.
using GraphFn = std::function<ad::Var(ad::Tape&, const ParamStore&)>;

/// backward() against central differences over every entry of `store`.
inline GradCheckResult check_graph(const GraphFn& build, const ParamStore& store, double step = 1e-6) {
  ad::Tape tape;
  const Gradients analytic = tape.backward(build(tape, store), store);
  const Gradients numeric = finite_diff_grad(
      [&](const ParamStore& s) {
        ad::Tape t(false);
        return build(t, s).value().item();
      },
      store, step);
  return compare_gradients(analytic, numeric);
}

/// Fresh scratch directory under the build tree, emptied on creation.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const std::filesystem::path dir = std::filesystem::path(ZIMM_SCRATCH_DIR) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace zimm::testing
