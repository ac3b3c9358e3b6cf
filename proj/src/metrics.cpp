#include "zimm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "zimm/errors.hpp"
#include "zimm/rng.hpp"

namespace zimm {

using nlohmann::json;

std::size_t ScoredLabels::positives() const {
  return static_cast<std::size_t>(std::count(label.begin(), label.end(), std::uint8_t{1}));
}

void ScoredLabels::validate() const {
  if (score.size() != label.size()) throw ValidationError("scored labels: length mismatch");
  if (score.empty()) throw ValidationError("scored labels: empty input");
  for (auto l : label) {
    if (l > 1) throw ValidationError("scored labels: labels must be 0 or 1");
  }
  for (double s : score) {
    if (!std::isfinite(s)) throw ValidationError("scored labels: non-finite score");
  }
}

namespace {

// Midranks (1-based) of `values`.
std::vector<double> midranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

// U of sample a from pooled midranks, first na entries belonging to a.
double u_from_ranks(const std::vector<double>& ranks, std::size_t na) {
  double ra = 0.0;
  for (std::size_t i = 0; i < na; ++i) ra += ranks[i];
  return ra - static_cast<double>(na) * static_cast<double>(na + 1) / 2.0;
}

}  // namespace

double auc_roc(const ScoredLabels& sl) {
  sl.validate();
  const std::size_t pos = sl.positives();
  const std::size_t neg = sl.negatives();
  if (pos == 0 || neg == 0) throw ValidationError("auc_roc needs at least one positive and one negative");
  const std::vector<double> ranks = midranks(sl.score);
  double rpos = 0.0;
  for (std::size_t i = 0; i < sl.size(); ++i) {
    if (sl.label[i]) rpos += ranks[i];
  }
  const double u = rpos - static_cast<double>(pos) * static_cast<double>(pos + 1) / 2.0;
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

double average_precision(const ScoredLabels& sl) {
  sl.validate();
  const std::size_t pos = sl.positives();
  if (pos == 0) throw ValidationError("average_precision needs at least one positive");
  std::vector<std::size_t> order(sl.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return sl.score[i] > sl.score[j]; });
  double ap = 0.0;
  std::size_t tp = 0, seen = 0, prev_tp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && sl.score[order[j]] == sl.score[order[i]]) {
      tp += sl.label[order[j]];
      ++seen;
      ++j;
    }
    if (tp > prev_tp) {
      ap += static_cast<double>(tp - prev_tp) / static_cast<double>(pos) * static_cast<double>(tp) /
            static_cast<double>(seen);
    }
    prev_tp = tp;
    i = j;
  }
  return ap;
}

double auc_pr(const ScoredLabels& sl) { return average_precision(sl); }

MeanApResult mean_ap(const std::vector<ScoredLabels>& buckets) {
  MeanApResult r;
  double total = 0.0;
  std::size_t used = 0;
  for (const auto& b : buckets) {
    if (b.positives() == 0) {
      r.per_bucket.push_back(std::nullopt);
      ++r.skipped;
      continue;
    }
    const double ap = average_precision(b);
    r.per_bucket.push_back(ap);
    total += ap;
    ++used;
  }
  if (used == 0) throw ValidationError("mean_ap: no bucket has a positive example");
  r.mean_ap = total / static_cast<double>(used);
  return r;
}

// ---- resampling -----------------------------------------------------------------

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

BoxplotStats boxplot_stats(std::vector<double> values) {
  if (values.empty()) throw ValidationError("boxplot of an empty sample");
  std::sort(values.begin(), values.end());
  BoxplotStats s;
  s.q1 = percentile(values, 25);
  s.median = percentile(values, 50);
  s.q3 = percentile(values, 75);
  const double iqr = s.q3 - s.q1;
  s.whisker_low = *std::lower_bound(values.begin(), values.end(), s.q1 - 1.5 * iqr);
  s.whisker_high = *(std::upper_bound(values.begin(), values.end(), s.q3 + 1.5 * iqr) - 1);
  return s;
}

json BoxplotStats::to_json() const {
  return json{{"whisker_low", whisker_low}, {"q1", q1}, {"median", median}, {"q3", q3}, {"whisker_high", whisker_high}};
}

json BootstrapSummary::to_json(bool include_values) const {
  json j{{"resamples", values.size()}, {"mean", mean},         {"ci_low", ci_low},
         {"ci_high", ci_high},         {"redraws", redraws},    {"boxplot", box.to_json()}};
  if (include_values) j["values"] = values;
  return j;
}

BootstrapSummary bootstrap(std::size_t n, const ResampleMetric& metric, std::size_t n_resamples, std::uint64_t seed) {
  if (n == 0) throw ValidationError("bootstrap: empty sample");
  if (n_resamples == 0) throw ValidationError("bootstrap: need at least one resample");
  const std::size_t max_redraws = 100 * n_resamples + 1000;
  const RngStream root = RngStream(seed).split("bootstrap");
  BootstrapSummary s;
  s.values.reserve(n_resamples);
  std::vector<std::size_t> idx(n);
  for (std::size_t r = 0; r < n_resamples; ++r) {
    RngStream rng = root.split(static_cast<std::uint64_t>(r));
    for (;;) {
      for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n));
      if (auto v = metric(idx)) {
        s.values.push_back(*v);
        break;
      }
      if (++s.redraws > max_redraws) throw ValidationError("bootstrap: too many degenerate resamples");
    }
  }
  s.mean = std::accumulate(s.values.begin(), s.values.end(), 0.0) / static_cast<double>(s.values.size());
  s.ci_low = percentile(s.values, 2.5);
  s.ci_high = percentile(s.values, 97.5);
  s.box = boxplot_stats(s.values);
  return s;
}

BootstrapSummary bootstrap(const ScoredLabels& sl, const std::function<double(const ScoredLabels&)>& metric,
                           std::size_t n_resamples, std::uint64_t seed) {
  sl.validate();
  ScoredLabels sample;
  return bootstrap(
      sl.size(),
      [&](std::span<const std::size_t> idx) -> std::optional<double> {
        sample.score.clear();
        sample.label.clear();
        for (std::size_t i : idx) {
          sample.score.push_back(sl.score[i]);
          sample.label.push_back(sl.label[i]);
        }
        const std::size_t pos = sample.positives();
        if (pos == 0 || pos == sample.size()) return std::nullopt;
        return metric(sample);
      },
      n_resamples, seed);
}

// ---- Mann-Whitney U ---------------------------------------------------------------

json MannWhitneyResult::to_json() const { return json{{"u", u}, {"p", p}, {"exact", exact}}; }

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ValidationError("mann_whitney_u: both samples must be non-empty");
  const std::size_t na = a.size(), nb = b.size(), n = na + nb;
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::vector<double> ranks = midranks(pooled);
  MannWhitneyResult r;
  r.u = u_from_ranks(ranks, na);
  const double mean = static_cast<double>(na) * static_cast<double>(nb) / 2.0;
  const double dev = std::abs(r.u - mean);

  if (na <= 8 && nb <= 8) {
    // every way of assigning na of the pooled midranks to sample a
    r.exact = true;
    std::vector<std::uint8_t> pick(n, 0);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(na), 1);
    std::size_t total = 0, extreme = 0;
    do {
      double ra = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (pick[i]) ra += ranks[i];
      }
      const double u = ra - static_cast<double>(na) * static_cast<double>(na + 1) / 2.0;
      ++total;
      if (std::abs(u - mean) >= dev - 1e-9) ++extreme;
    } while (std::prev_permutation(pick.begin(), pick.end()));
    r.p = static_cast<double>(extreme) / static_cast<double>(total);
    return r;
  }

  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double dn = static_cast<double>(n);
  const double var = static_cast<double>(na) * static_cast<double>(nb) / 12.0 *
                     ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
  if (var <= 0.0) {
    r.p = 1.0;
    return r;
  }
  const double z = std::max(0.0, dev - 0.5) / std::sqrt(var);
  r.p = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return r;
}

}  // namespace zimm
