#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace zimm {

/// Parallel score / binary label arrays.
struct ScoredLabels {
  std::vector<double> score;
  std::vector<std::uint8_t> label;

  std::size_t size() const { return score.size(); }
  std::size_t positives() const;
  std::size_t negatives() const { return size() - positives(); }
  /// Throws ValidationError on length mismatch, emptiness or non-binary labels.
  void validate() const;
};

/// P(score of a random positive > score of a random negative), ties count 1/2.
/// Throws unless both classes are present.
double auc_roc(const ScoredLabels& sl);

/// Step-wise average precision over distinct score thresholds (descending):
/// sum_k (R_k - R_{k-1}) P_k. Tied scores form one threshold.
double average_precision(const ScoredLabels& sl);

/// Area under the precision-recall curve, taken as average precision.
double auc_pr(const ScoredLabels& sl);

struct MeanApResult {
  double mean_ap = 0.0;
  std::vector<std::optional<double>> per_bucket;  // nullopt: no positives, skipped
  std::size_t skipped = 0;
};

/// Mean of per-bucket AP over buckets that have at least one positive.
/// Throws when no bucket has a positive.
MeanApResult mean_ap(const std::vector<ScoredLabels>& buckets);

// ---- resampling and tests ---------------------------------------------------

/// Quartiles and 1.5 IQR whiskers (clamped to observed values).
struct BoxplotStats {
  double whisker_low = 0, q1 = 0, median = 0, q3 = 0, whisker_high = 0;
  nlohmann::json to_json() const;
};
BoxplotStats boxplot_stats(std::vector<double> values);

/// Linear-interpolation percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

struct BootstrapSummary {
  std::vector<double> values;
  double mean = 0.0;
  double ci_low = 0.0;   // 2.5th percentile
  double ci_high = 0.0;  // 97.5th percentile
  std::size_t redraws = 0;
  BoxplotStats box;

  nlohmann::json to_json(bool include_values = false) const;
};

/// Metric on a resample of row indices; nullopt marks a degenerate resample.
using ResampleMetric = std::function<std::optional<double>(std::span<const std::size_t>)>;

/// Resamples `n` rows with replacement `n_resamples` times. Resample r draws
/// from its own stream split from `seed`, so the result does not depend on
/// evaluation order. Degenerate resamples are redrawn (and counted).
BootstrapSummary bootstrap(std::size_t n, const ResampleMetric& metric, std::size_t n_resamples,
                           std::uint64_t seed);

/// Convenience form over one ScoredLabels; resamples missing a class are
/// degenerate.
BootstrapSummary bootstrap(const ScoredLabels& sl, const std::function<double(const ScoredLabels&)>& metric,
                           std::size_t n_resamples, std::uint64_t seed);

struct MannWhitneyResult {
  double u = 0.0;   // statistic of sample a
  double p = 1.0;   // two-sided
  bool exact = false;
  nlohmann::json to_json() const;
};

/// Midranks for ties. Exact permutation distribution when both samples have
/// at most 8 values, otherwise the normal approximation with tie-corrected
/// variance and continuity correction.
MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b);

}  // namespace zimm
