#include <cmath>
#include <map>
#include <numeric>

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include "test_util.hpp"
#include "zimm/zimm_dist.hpp"

namespace zimm {
namespace {

using testing::check_graph;
using testing::random_tensor;

std::vector<double> probability_vector(std::size_t n, RngStream& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(0.01, 1.0);
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  for (double& x : v) x /= total;
  return v;
}

ZimmParams random_params(std::size_t B, RngStream& rng) {
  ZimmParams p;
  p.pi = probability_vector(B + 1, rng);
  p.P = Tensor({B, B});
  for (std::size_t r = 0; r < B; ++r) {
    const auto row = probability_vector(B, rng);
    for (std::size_t c = 0; c < B; ++c) p.P.at(r, c) = row[c];
  }
  return p;
}

ZimmParams uniform3() {
  ZimmParams p;
  p.pi = {0.25, 0.25, 0.25, 0.25};
  p.P = Tensor({3, 3}, 1.0 / 3.0);
  return p;
}

// Direct product formula with plain factorials, no logs.
double brute_pmf(const ZimmParams& p, const std::vector<std::uint32_t>& y) {
  unsigned n = 0;
  for (auto v : y) n += v;
  if (n == 0) return p.pi[0];
  auto fact = [](unsigned k) {
    double f = 1.0;
    for (unsigned i = 2; i <= k; ++i) f *= i;
    return f;
  };
  double coef = fact(n), prod = 1.0;
  for (std::size_t b = 0; b < y.size(); ++b) {
    coef /= fact(y[b]);
    prod *= std::pow(p.P.at(n - 1, b), y[b]);
  }
  return p.pi[n] * coef * prod;
}

// All count vectors over B buckets with total <= B.
void compositions(std::size_t B, std::size_t at, unsigned left, std::vector<std::uint32_t>& cur,
                  std::vector<std::vector<std::uint32_t>>& out) {
  if (at == B) {
    out.push_back(cur);
    return;
  }
  for (unsigned v = 0; v <= left; ++v) {
    cur[at] = v;
    compositions(B, at + 1, left - v, cur, out);
  }
  cur[at] = 0;
}

std::vector<std::vector<std::uint32_t>> all_labels(std::size_t B) {
  std::vector<std::vector<std::uint32_t>> out;
  std::vector<std::uint32_t> cur(B, 0);
  compositions(B, 0, static_cast<unsigned>(B), cur, out);
  return out;
}

// ---- worked examples ----------------------------------------------------------------

TEST(LogPmf, UniformThreeBucketExamples) {
  const ZimmParams p = uniform3();
  EXPECT_NEAR(log_pmf(p, LabelVector({0, 0, 0})), std::log(0.25), 1e-15);
  EXPECT_NEAR(log_pmf(p, LabelVector({1, 0, 0})), std::log(1.0 / 12.0), 1e-14);
  EXPECT_NEAR(log_pmf(p, LabelVector({1, 1, 0})), std::log(1.0 / 18.0), 1e-14);
  EXPECT_NEAR(brute_pmf(p, {1, 0, 0}), 1.0 / 12.0, 1e-15);
  EXPECT_NEAR(brute_pmf(p, {1, 1, 0}), 1.0 / 18.0, 1e-15);
}

TEST(Pmf, SmallExamples) {
  ZimmParams one;
  one.pi = {0.4, 0.6};
  one.P = Tensor::matrix(1, 1, {1.0});
  EXPECT_NEAR(pmf(one, LabelVector({1})), 0.6, 1e-15);
  EXPECT_NEAR(pmf(one, LabelVector({0})), 0.4, 1e-15);

  ZimmParams two;
  two.pi = {0.5, 0.3, 0.2};
  two.P = Tensor::matrix(2, 2, {0.7, 0.3, 0.4, 0.6});
  EXPECT_NEAR(pmf(two, LabelVector({0, 2})), 0.072, 1e-15);
  EXPECT_NEAR(brute_pmf(two, {0, 2}), 0.072, 1e-15);
  EXPECT_EQ(pmf(two, LabelVector({0, 0})), 0.5);
}

TEST(LogPmf, ZeroProbabilityGivesTheSentinel) {
  ZimmParams p;
  p.pi = {0.5, 0.5, 0.0};
  p.P = Tensor::matrix(2, 2, {1.0, 0.0, 0.5, 0.5});
  EXPECT_EQ(log_pmf(p, LabelVector({0, 1})), kLogZero);
  EXPECT_EQ(pmf(p, LabelVector({0, 1})), 0.0);
  EXPECT_EQ(log_pmf(p, LabelVector({1, 1})), kLogZero);
  EXPECT_EQ(log_pmf(p, LabelVector({1, 0})), std::log(0.5));
}

TEST(LogPmf, InvalidInputsAreRejected) {
  const ZimmParams p = uniform3();
  EXPECT_THROW(log_pmf(p, LabelVector({2, 1, 1})), std::invalid_argument);
  EXPECT_THROW(log_pmf(p, LabelVector({1, 0})), std::invalid_argument);
  ZimmParams bad = uniform3();
  bad.pi[0] = 0.5;
  EXPECT_THROW(log_pmf(bad, LabelVector({0, 0, 0})), std::invalid_argument);
  bad = uniform3();
  bad.P.at(1, 1) = -0.1;
  EXPECT_THROW(log_pmf(bad, LabelVector({0, 0, 0})), std::invalid_argument);
}

TEST(Support, SizesAndGuard) {
  ZimmParams one;
  one.pi = {0.3, 0.7};
  one.P = Tensor::matrix(1, 1, {1.0});
  const auto s1 = enumerate_support(one);
  ASSERT_EQ(s1.size(), 2u);
  EXPECT_EQ(s1[0].first, LabelVector({0}));
  EXPECT_EQ(s1[0].second, 0.3);
  EXPECT_EQ(s1[1].first, LabelVector({1}));
  EXPECT_EQ(s1[1].second, 0.7);

  RngStream rng(1);
  EXPECT_EQ(enumerate_support(random_params(2, rng)).size(), 6u);
  EXPECT_EQ(enumerate_support(uniform3()).size(), 20u);
  EXPECT_EQ(enumerate_support(uniform3()).size(), all_labels(3).size());
  for (std::size_t B = 1; B <= 6; ++B) EXPECT_EQ(support_size(B), all_labels(B).size());
  EXPECT_THROW(enumerate_support(ZimmParams::uniform(7)), std::invalid_argument);
}

TEST(Sample, DegenerateParameters) {
  RngStream rng(5);
  ZimmParams zero = ZimmParams::uniform(4);
  zero.pi = {1.0, 0.0, 0.0, 0.0, 0.0};
  ZimmParams full = ZimmParams::uniform(4);
  full.pi = {0.0, 0.0, 0.0, 0.0, 1.0};
  for (std::size_t c = 0; c < 4; ++c) full.P.at(3, c) = c == 0 ? 1.0 : 0.0;
  for (int i = 0; i < 1000; ++i) {
    EXPECT_EQ(sample(zero, rng), LabelVector({0, 0, 0, 0}));
    EXPECT_EQ(sample(full, rng), LabelVector({4, 0, 0, 0}));
  }
}

TEST(Scores, RelapseAndBucketProbabilities) {
  ZimmParams certain = ZimmParams::uniform(3);
  certain.pi = {1.0, 0.0, 0.0, 0.0};
  EXPECT_EQ(prob_relapse(certain), 0.0);
  for (std::size_t b = 1; b <= 3; ++b) EXPECT_EQ(prob_bucket_nonzero(certain, b), 0.0);
  ZimmParams p = ZimmParams::uniform(2);
  p.pi = {0.3, 0.4, 0.3};
  EXPECT_NEAR(prob_relapse(p), 0.7, 1e-15);
  ZimmParams one;
  one.pi = {0.0, 1.0};
  one.P = Tensor::matrix(1, 1, {1.0});
  EXPECT_EQ(prob_bucket_nonzero(one, 1), 1.0);
  EXPECT_THROW(prob_bucket_nonzero(one, 0), std::out_of_range);
  EXPECT_THROW(prob_bucket_nonzero(one, 2), std::out_of_range);

  const ZimmParams u = uniform3();
  double with_y1 = 0.0;
  for (const auto& y : all_labels(3))
    if (y[0] >= 1) with_y1 += brute_pmf(u, y);
  EXPECT_NEAR(prob_bucket_nonzero(u, 1), with_y1, 1e-12);
  EXPECT_NEAR(prob_relapse(u), 1.0 - brute_pmf(u, {0, 0, 0}), 1e-15);
}

// ---- properties ----------------------------------------------------------------------

TEST(Properties, NormalizationOverRandomDraws) {
  RngStream rng(2024);
  for (std::size_t B = 1; B <= 4; ++B) {
    for (int draw = 0; draw < 50; ++draw) {
      const ZimmParams p = random_params(B, rng);
      double total = 0.0;
      for (const auto& [y, prob] : enumerate_support(p)) total += prob;
      EXPECT_NEAR(total, 1.0, 1e-9) << "B=" << B;
    }
  }
}

TEST(Properties, PmfMatchesTheDirectProductFormula) {
  RngStream rng(7);
  for (std::size_t B = 1; B <= 5; ++B) {
    for (int draw = 0; draw < 10; ++draw) {
      const ZimmParams p = random_params(B, rng);
      for (const auto& y : all_labels(B)) {
        const LabelVector lv(y);
        const double direct = brute_pmf(p, y);
        EXPECT_NEAR(pmf(p, lv), direct, 1e-12 * direct);
        EXPECT_NEAR(std::exp(log_pmf(p, lv)), pmf(p, lv), 1e-12 * pmf(p, lv));
      }
    }
  }
}

TEST(Properties, BucketMarginalsMatchEnumeration) {
  RngStream rng(13);
  for (std::size_t B = 1; B <= 4; ++B) {
    for (int draw = 0; draw < 50; ++draw) {
      const ZimmParams p = random_params(B, rng);
      const auto labels = all_labels(B);
      for (std::size_t b = 1; b <= B; ++b) {
        double marginal = 0.0;
        for (const auto& y : labels)
          if (y[b - 1] >= 1) marginal += brute_pmf(p, y);
        EXPECT_NEAR(prob_bucket_nonzero(p, b), marginal, 1e-9);
      }
    }
  }
}

TEST(Properties, SamplingPassesChiSquareAgainstEnumeration) {
  ZimmParams p;
  p.pi = {0.35, 0.25, 0.15, 0.25};
  p.P = Tensor::matrix(3, 3, {0.6, 0.3, 0.1, 0.2, 0.5, 0.3, 0.1, 0.1, 0.8});
  const auto support = enumerate_support(p);
  std::map<LabelVector, double> expected;
  for (const auto& [y, prob] : support) expected[y] = brute_pmf(p, y.y);

  constexpr int kSamples = 100000;
  std::map<LabelVector, int> observed;
  RngStream rng(42);
  for (int i = 0; i < kSamples; ++i) ++observed[sample(p, rng)];
  double stat = 0.0;
  for (const auto& [y, prob] : expected) {
    const double e = kSamples * prob;
    const double o = observed.count(y) ? observed.at(y) : 0;
    stat += (o - e) * (o - e) / e;
  }
  for (const auto& [y, count] : observed) EXPECT_TRUE(expected.count(y)) << "sample outside the support";
  const boost::math::chi_squared dist(static_cast<double>(expected.size() - 1));
  const double pvalue = boost::math::cdf(boost::math::complement(dist, stat));
  EXPECT_GT(pvalue, 1e-3) << "chi2=" << stat;
}

TEST(Properties, NllFromLogitsMatchesPmfAndFiniteDifferences) {
  RngStream rng(17);
  for (std::size_t B = 1; B <= 4; ++B) {
    for (const auto& y : all_labels(B)) {
      ParamStore s;
      s.add("pi", random_tensor({B + 1}, rng, -2, 2));
      s.add("rows", random_tensor({B, B}, rng, -2, 2));
      const LabelVector lv(y);
      const auto build = [&](ad::Tape& t, const ParamStore& p) {
        return zimm_nll_from_logits(t.parameter(p, "pi"), t.parameter(p, "rows"), lv);
      };
      ad::Tape t(false);
      const double nll = build(t, s).value().item();
      const ZimmParams params = params_from_logits(s.get("pi"), s.get("rows"));
      EXPECT_NEAR(nll, -std::log(brute_pmf(params, y)), 1e-12 * std::max(1.0, nll));
      EXPECT_GE(nll, 0.0);
      const GradCheckResult r = check_graph(build, s);
      EXPECT_LT(r.max_relative_error, 1e-5) << "B=" << B;
    }
  }
}

}  // namespace
}  // namespace zimm
