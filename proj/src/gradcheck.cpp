#include "zimm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace zimm {

Gradients finite_diff_grad(const ScalarFn& f, const ParamStore& params, double step,
                           const std::vector<std::string>& names) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  ParamStore work = params;
  Gradients out;
  const std::vector<std::string> keys = names.empty() ? params.names() : names;
  for (const std::string& name : keys) {
    Tensor& w = work.get_mutable(name);
    Tensor g(w.shape());
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + step;
      const double up = f(work);
      w[i] = orig - step;
      const double down = f(work);
      w[i] = orig;
      g[i] = (up - down) / (2.0 * step);
    }
    out.emplace(name, std::move(g));
  }
  return out;
}

double relative_error(double a, double b, double floor) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

GradCheckResult compare_gradients(const Gradients& analytic, const Gradients& numeric,
                                  double floor) {
  GradCheckResult r;
  for (const auto& [name, num] : numeric) {
    auto it = analytic.find(name);
    if (it == analytic.end()) throw std::invalid_argument("compare_gradients: missing " + name);
    const Tensor& ana = it->second;
    if (ana.size() != num.size()) throw ShapeError("compare_gradients: shape mismatch for " + name);
    for (std::size_t i = 0; i < num.size(); ++i) {
      const double e = relative_error(ana[i], num[i], floor);
      ++r.coordinates;
      if (e > r.max_relative_error || r.worst_parameter.empty()) {
        if (e >= r.max_relative_error) {
          r.max_relative_error = e;
          r.worst_parameter = name;
          r.worst_index = i;
        }
      }
    }
  }
  return r;
}

}  // namespace zimm
