#include "zimm/zimm_dist.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace zimm {

namespace {

void check_probability_vector(std::span<const double> v, double tol, const std::string& what) {
  double total = 0.0;
  for (double x : v) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw std::invalid_argument(what + " has a negative or non-finite entry");
    }
    total += x;
  }
  if (std::abs(total - 1.0) > tol) {
    throw std::invalid_argument(what + " sums to " + std::to_string(total) + ", expected 1");
  }
}

void check_labels(const ZimmParams& params, const LabelVector& y) {
  if (y.buckets() != params.buckets()) {
    throw std::invalid_argument("label vector has " + std::to_string(y.buckets()) +
                                " buckets, parameters have " + std::to_string(params.buckets()));
  }
  if (y.n() > params.buckets()) {
    throw std::invalid_argument("label total n=" + std::to_string(y.n()) + " exceeds B=" +
                                std::to_string(params.buckets()));
  }
}

void enumerate_rec(std::size_t pos, std::uint32_t remaining, LabelVector& current,
                   std::vector<LabelVector>& out) {
  if (pos == current.y.size()) {
    out.push_back(current);
    return;
  }
  for (std::uint32_t v = 0; v <= remaining; ++v) {
    current.y[pos] = v;
    enumerate_rec(pos + 1, remaining - v, current, out);
  }
  current.y[pos] = 0;
}

}  // namespace

void ZimmParams::validate(double tol) const {
  const std::size_t B = buckets();
  if (B == 0) throw std::invalid_argument("ZimmParams: empty mixture");
  if (P.rank() != 2 || P.shape()[0] != B || P.shape()[1] != B) {
    throw std::invalid_argument("ZimmParams: P must be " + std::to_string(B) + "x" +
                                std::to_string(B) + ", got " + shape_string(P.shape()));
  }
  check_probability_vector(pi, tol, "pi");
  for (std::size_t r = 0; r < B; ++r) {
    check_probability_vector(P.data().subspan(r * B, B), tol, "row " + std::to_string(r + 1) + " of P");
  }
}

ZimmParams ZimmParams::uniform(std::size_t buckets) {
  ZimmParams p;
  p.pi.assign(buckets + 1, 1.0 / static_cast<double>(buckets + 1));
  p.P = Tensor(Shape{buckets, buckets}, 1.0 / static_cast<double>(buckets));
  return p;
}

std::uint32_t LabelVector::n() const { return std::accumulate(y.begin(), y.end(), std::uint32_t{0}); }

double log_multinomial_coefficient(const LabelVector& y) {
  double out = std::lgamma(static_cast<double>(y.n()) + 1.0);
  for (std::uint32_t v : y.y) out -= std::lgamma(static_cast<double>(v) + 1.0);
  return out;
}

double log_pmf(const ZimmParams& params, const LabelVector& y) {
  params.validate();
  check_labels(params, y);
  const std::uint32_t n = y.n();
  if (n == 0) return params.pi[0] > 0.0 ? std::log(params.pi[0]) : kLogZero;
  if (params.pi[n] <= 0.0) return kLogZero;
  double out = std::log(params.pi[n]) + log_multinomial_coefficient(y);
  for (std::size_t b = 1; b <= y.buckets(); ++b) {
    const std::uint32_t count = y.y[b - 1];
    if (count == 0) continue;
    const double p = params.p(n, b);
    if (p <= 0.0) return kLogZero;
    out += count * std::log(p);
  }
  return out;
}

double pmf(const ZimmParams& params, const LabelVector& y) {
  const double lp = log_pmf(params, y);
  return lp <= kLogZero ? 0.0 : std::exp(lp);
}

LabelVector sample(const ZimmParams& params, RngStream& rng) {
  const std::size_t B = params.buckets();
  LabelVector y(std::vector<std::uint32_t>(B, 0));
  const std::size_t n = rng.categorical(params.pi);
  if (n == 0) return y;
  const auto counts = rng.multinomial(n, params.P.data().subspan((n - 1) * B, B));
  for (std::size_t b = 0; b < B; ++b) y.y[b] = static_cast<std::uint32_t>(counts[b]);
  return y;
}

std::size_t support_size(std::size_t buckets) {
  // compositions of k <= B into B nonnegative parts: sum_k C(k+B-1, B-1) = C(2B, B)
  std::size_t c = 1;
  for (std::size_t i = 1; i <= buckets; ++i) c = c * (buckets + i) / i;
  return c;
}

std::vector<std::pair<LabelVector, double>> enumerate_support(const ZimmParams& params) {
  const std::size_t B = params.buckets();
  if (B > 6) {
    throw std::invalid_argument("enumerate_support: B=" + std::to_string(B) +
                                " exceeds the combinatorial guard of 6");
  }
  params.validate();
  std::vector<LabelVector> points;
  LabelVector current(std::vector<std::uint32_t>(B, 0));
  enumerate_rec(0, static_cast<std::uint32_t>(B), current, points);
  std::vector<std::pair<LabelVector, double>> out;
  out.reserve(points.size());
  for (auto& y : points) {
    const double p = pmf(params, y);
    out.emplace_back(std::move(y), p);
  }
  return out;
}

double prob_relapse(const ZimmParams& params) { return 1.0 - params.pi.at(0); }

double prob_bucket_nonzero(const ZimmParams& params, std::size_t b) {
  const std::size_t B = params.buckets();
  if (b < 1 || b > B) throw std::out_of_range("prob_bucket_nonzero: bucket out of range");
  double none = params.pi[0];
  for (std::size_t k = 1; k <= B; ++k) {
    none += params.pi[k] * std::pow(1.0 - params.p(k, b), static_cast<double>(k));
  }
  return std::clamp(1.0 - none, 0.0, 1.0);
}

ad::Var zimm_nll(ad::Var log_pi, ad::Var log_row, const LabelVector& y) {
  const std::size_t B = y.buckets();
  if (log_pi.value().size() != B + 1) {
    throw ShapeError("zimm_nll: log_pi has " + std::to_string(log_pi.value().size()) +
                     " entries, expected " + std::to_string(B + 1));
  }
  const std::uint32_t n = y.n();
  if (n > B) {
    throw std::invalid_argument("zimm_nll: label total n=" + std::to_string(n) + " exceeds B=" +
                                std::to_string(B));
  }
  Tensor pick(Shape{B + 1});
  pick[n] = 1.0;
  ad::Var ll = ad::weighted_sum(log_pi, pick);
  if (n > 0) {
    if (log_row.value().size() != B) {
      throw ShapeError("zimm_nll: log_row must have " + std::to_string(B) + " entries");
    }
    Tensor counts(Shape{B});
    for (std::size_t b = 0; b < B; ++b) counts[b] = y.y[b];
    ll = ad::add(ll, ad::weighted_sum(log_row, counts));
  }
  return ad::affine(ll, -1.0, -log_multinomial_coefficient(y));
}

ad::Var zimm_nll_from_logits(ad::Var pi_logits, ad::Var row_logits, const LabelVector& y) {
  ad::Var log_pi = ad::log_softmax(pi_logits, 0);
  const std::uint32_t n = y.n();
  if (n == 0) return zimm_nll(log_pi, ad::Var(), y);
  ad::Var log_rows = ad::log_softmax(row_logits, 1);
  ad::Var row = ad::reshape(ad::slice(log_rows, n - 1, 1), Shape{y.buckets()});
  return zimm_nll(log_pi, row, y);
}

ZimmParams params_from_logits(const Tensor& pi_logits, const Tensor& row_logits) {
  ad::Tape tape(false);
  ZimmParams p;
  p.pi = ad::softmax(tape.constant(pi_logits), 0).value().storage();
  p.P = ad::softmax(tape.constant(row_logits), 1).value();
  return p;
}

}  // namespace zimm
