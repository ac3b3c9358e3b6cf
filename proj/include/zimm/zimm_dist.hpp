#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "zimm/autodiff.hpp"
#include "zimm/rng.hpp"
#include "zimm/tensor.hpp"

namespace zimm {

/// Returned by log_pmf when the probability is exactly zero.
inline constexpr double kLogZero = -1e30;

/// Parameters of a zero-inflated mixture of multinomials over B buckets.
/// pi[k] is P(n = k) for k = 0..B; row k-1 of P holds the bucket
/// probabilities of the multinomial used when n = k.
struct ZimmParams {
  std::vector<double> pi;
  Tensor P;

  std::size_t buckets() const { return pi.empty() ? 0 : pi.size() - 1; }
  double p(std::size_t n, std::size_t b) const { return P.at(n - 1, b - 1); }  // 1-based
  /// Throws std::invalid_argument unless pi and every row of P are
  /// probability vectors within `tol`.
  void validate(double tol = 1e-9) const;

  static ZimmParams uniform(std::size_t buckets);
};

/// Relapse counts per bucket.
struct LabelVector {
  std::vector<std::uint32_t> y;

  LabelVector() = default;
  explicit LabelVector(std::vector<std::uint32_t> counts) : y(std::move(counts)) {}
  std::uint32_t n() const;
  std::size_t buckets() const { return y.size(); }
  bool operator==(const LabelVector&) const = default;
  auto operator<=>(const LabelVector&) const = default;
};

/// log(n! / prod_b y_b!)
double log_multinomial_coefficient(const LabelVector& y);

double log_pmf(const ZimmParams& params, const LabelVector& y);
double pmf(const ZimmParams& params, const LabelVector& y);
LabelVector sample(const ZimmParams& params, RngStream& rng);

/// Every label vector with sum <= B and its probability. B is capped at 6.
std::vector<std::pair<LabelVector, double>> enumerate_support(const ZimmParams& params);
/// Number of label vectors with sum <= B over B buckets: C(2B, B).
std::size_t support_size(std::size_t buckets);

/// P(n > 0) = 1 - pi_0.
double prob_relapse(const ZimmParams& params);
/// P(y_b >= 1) for 1-based bucket b.
double prob_bucket_nonzero(const ZimmParams& params, std::size_t b);

/// Differentiable negative log-likelihood. `log_pi` has B+1 entries; `log_row`
/// holds log p_{n,.} for the observed n and is ignored when n = 0. The
/// multinomial coefficient is included so the value is an exact NLL.
ad::Var zimm_nll(ad::Var log_pi, ad::Var log_row, const LabelVector& y);

/// Same NLL from unconstrained logits: pi = softmax(pi_logits) and
/// P = row-wise softmax(row_logits).
ad::Var zimm_nll_from_logits(ad::Var pi_logits, ad::Var row_logits, const LabelVector& y);

/// Softmax parametrization used by zimm_nll_from_logits, for oracles.
ZimmParams params_from_logits(const Tensor& pi_logits, const Tensor& row_logits);

}  // namespace zimm
