#pragma once

// Per-patient score files shared by ZiMM ED and the baselines, and the single
// MetricsReport producer both go through.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "zimm/metrics.hpp"
#include "zimm/zimm_dist.hpp"

namespace zimm {

struct PatientScores {
  std::string patient_id;
  LabelVector labels;
  std::vector<double> bucket_scores;  // P(y_b >= 1), b = 1..B
  double relapse_score = 0.0;         // P(n > 0)

  bool operator==(const PatientScores&) const = default;
};

/// Scores implied by ZiMM parameters.
PatientScores scores_from_params(std::string patient_id, const LabelVector& labels, const ZimmParams& params);

/// JSON lines: patient_id, labels, bucket_scores, relapse_score.
void write_scores(const std::filesystem::path& path, const std::vector<PatientScores>& scores);
std::vector<PatientScores> read_scores(const std::filesystem::path& path);

/// Binary n > 0 task and per-bucket y_b >= 1 tasks over the rows in `idx`
/// (all rows when empty).
ScoredLabels relapse_task(const std::vector<PatientScores>& s, std::span<const std::size_t> idx = {});
std::vector<ScoredLabels> bucket_tasks(const std::vector<PatientScores>& s, std::span<const std::size_t> idx = {});

struct MetricsReport {
  std::size_t patients = 0;
  std::size_t buckets = 0;
  std::optional<double> mean_ap;
  std::optional<double> auc_roc;
  std::optional<double> auc_pr;
  std::vector<std::optional<double>> per_bucket_ap;
  std::size_t skipped_buckets = 0;
  /// Expected mean-AP of a random ranking: mean bucket prevalence over the
  /// buckets used by mean_ap.
  std::optional<double> prevalence_mean_ap;
  double relapse_prevalence = 0.0;
  std::optional<std::size_t> parameter_count;
  std::optional<BootstrapSummary> bootstrap_mean_ap;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

/// Metrics that are undefined on the data (a single class) are left empty
/// and noted in `warnings`.
MetricsReport compute_report(const std::vector<PatientScores>& scores);

/// Mean-AP on a resample, nullopt when no bucket has a positive.
std::optional<double> resample_mean_ap(const std::vector<PatientScores>& s, std::span<const std::size_t> idx);

struct Comparison {
  std::string name_a, name_b;
  double mean_ap_a = 0.0, mean_ap_b = 0.0;
  BootstrapSummary bootstrap_a, bootstrap_b;
  MannWhitneyResult test;  // bootstrap_a vs bootstrap_b

  nlohmann::json to_json() const;
};

/// Bootstraps mean-AP for both score sets with shared resample indices and
/// tests the two distributions with Mann-Whitney U. Patient ids and labels
/// must agree row by row.
Comparison compare_scores(const std::vector<PatientScores>& a, const std::vector<PatientScores>& b,
                          std::size_t n_resamples, std::uint64_t seed);

}  // namespace zimm
