#include "zimm/scores.hpp"

#include <fstream>
#include <numeric>

#include "zimm/errors.hpp"

namespace zimm {

using nlohmann::json;

PatientScores scores_from_params(std::string patient_id, const LabelVector& labels, const ZimmParams& params) {
  PatientScores s;
  s.patient_id = std::move(patient_id);
  s.labels = labels;
  s.bucket_scores.resize(params.buckets());
  for (std::size_t b = 1; b <= params.buckets(); ++b) s.bucket_scores[b - 1] = prob_bucket_nonzero(params, b);
  s.relapse_score = prob_relapse(params);
  return s;
}

void write_scores(const std::filesystem::path& path, const std::vector<PatientScores>& scores) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write scores file " + path.string());
  for (const auto& s : scores) {
    nlohmann::ordered_json j;
    j["patient_id"] = s.patient_id;
    j["labels"] = s.labels.y;
    j["bucket_scores"] = s.bucket_scores;
    j["relapse_score"] = s.relapse_score;
    out << j.dump() << '\n';
  }
  if (!out) throw ValidationError("write failed for " + path.string());
}

std::vector<PatientScores> read_scores(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open scores file " + path.string());
  std::vector<PatientScores> out;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      PatientScores s;
      s.patient_id = j.at("patient_id").get<std::string>();
      s.labels.y = j.at("labels").get<std::vector<std::uint32_t>>();
      s.bucket_scores = j.at("bucket_scores").get<std::vector<double>>();
      s.relapse_score = j.at("relapse_score").get<double>();
      if (s.bucket_scores.size() != s.labels.y.size()) throw ValidationError("bucket count mismatch");
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw ValidationError(path.string() + ": line " + std::to_string(line_number) + ": " + e.what());
    }
  }
  if (out.empty()) throw ValidationError("scores file " + path.string() + " is empty");
  return out;
}

namespace {

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace

ScoredLabels relapse_task(const std::vector<PatientScores>& s, std::span<const std::size_t> idx) {
  const std::vector<std::size_t> all = idx.empty() ? all_rows(s.size()) : std::vector<std::size_t>{};
  if (idx.empty()) idx = all;
  ScoredLabels sl;
  sl.score.reserve(idx.size());
  sl.label.reserve(idx.size());
  for (std::size_t i : idx) {
    sl.score.push_back(s[i].relapse_score);
    sl.label.push_back(s[i].labels.n() > 0 ? 1 : 0);
  }
  return sl;
}

std::vector<ScoredLabels> bucket_tasks(const std::vector<PatientScores>& s, std::span<const std::size_t> idx) {
  if (s.empty()) return {};
  const std::vector<std::size_t> all = idx.empty() ? all_rows(s.size()) : std::vector<std::size_t>{};
  if (idx.empty()) idx = all;
  const std::size_t B = s.front().labels.buckets();
  std::vector<ScoredLabels> tasks(B);
  for (auto& t : tasks) {
    t.score.reserve(idx.size());
    t.label.reserve(idx.size());
  }
  for (std::size_t i : idx) {
    if (s[i].labels.buckets() != B) throw ValidationError("scores: inconsistent bucket counts");
    for (std::size_t b = 0; b < B; ++b) {
      tasks[b].score.push_back(s[i].bucket_scores[b]);
      tasks[b].label.push_back(s[i].labels.y[b] >= 1 ? 1 : 0);
    }
  }
  return tasks;
}

std::optional<double> resample_mean_ap(const std::vector<PatientScores>& s, std::span<const std::size_t> idx) {
  const auto tasks = bucket_tasks(s, idx);
  for (const auto& t : tasks) {
    if (t.positives() > 0) return mean_ap(tasks).mean_ap;
  }
  return std::nullopt;
}

MetricsReport compute_report(const std::vector<PatientScores>& scores) {
  if (scores.empty()) throw ValidationError("cannot compute metrics on zero patients");
  MetricsReport r;
  r.patients = scores.size();
  r.buckets = scores.front().labels.buckets();

  const ScoredLabels relapse = relapse_task(scores);
  r.relapse_prevalence = static_cast<double>(relapse.positives()) / static_cast<double>(relapse.size());
  if (relapse.positives() > 0 && relapse.negatives() > 0) {
    r.auc_roc = auc_roc(relapse);
    r.auc_pr = auc_pr(relapse);
  } else {
    r.warnings.push_back("relapse task has a single class; AUC-ROC and AUC-PR undefined");
  }

  const auto tasks = bucket_tasks(scores);
  double prevalence = 0.0;
  std::size_t used = 0;
  for (std::size_t b = 0; b < tasks.size(); ++b) {
    const std::size_t pos = tasks[b].positives();
    if (pos == 0) {
      r.warnings.push_back("bucket " + std::to_string(b + 1) + " has no positives; skipped in mean-AP");
      continue;
    }
    prevalence += static_cast<double>(pos) / static_cast<double>(tasks[b].size());
    ++used;
  }
  if (used > 0) {
    const MeanApResult m = mean_ap(tasks);
    r.mean_ap = m.mean_ap;
    r.per_bucket_ap = m.per_bucket;
    r.skipped_buckets = m.skipped;
    r.prevalence_mean_ap = prevalence / static_cast<double>(used);
  } else {
    r.per_bucket_ap.assign(tasks.size(), std::nullopt);
    r.skipped_buckets = tasks.size();
    r.warnings.push_back("no bucket has a positive; mean-AP undefined");
  }
  return r;
}

json MetricsReport::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json per_bucket = json::array();
  for (const auto& v : per_bucket_ap) per_bucket.push_back(opt(v));
  json j{{"patients", patients},
         {"buckets", buckets},
         {"mean_ap", opt(mean_ap)},
         {"auc_roc", opt(auc_roc)},
         {"auc_pr", opt(auc_pr)},
         {"per_bucket_ap", per_bucket},
         {"skipped_buckets", skipped_buckets},
         {"prevalence_mean_ap", opt(prevalence_mean_ap)},
         {"relapse_prevalence", relapse_prevalence},
         {"warnings", warnings}};
  j["parameter_count"] = parameter_count ? json(*parameter_count) : json(nullptr);
  if (bootstrap_mean_ap) j["bootstrap_mean_ap"] = bootstrap_mean_ap->to_json();
  return j;
}

json Comparison::to_json() const {
  return json{{"a", {{"name", name_a}, {"mean_ap", mean_ap_a}, {"bootstrap", bootstrap_a.to_json()}}},
              {"b", {{"name", name_b}, {"mean_ap", mean_ap_b}, {"bootstrap", bootstrap_b.to_json()}}},
              {"mann_whitney", test.to_json()}};
}

Comparison compare_scores(const std::vector<PatientScores>& a, const std::vector<PatientScores>& b,
                          std::size_t n_resamples, std::uint64_t seed) {
  if (a.size() != b.size()) throw ValidationError("compare: score files cover different patient counts");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].patient_id != b[i].patient_id || a[i].labels != b[i].labels) {
      throw ValidationError("compare: row " + std::to_string(i + 1) + " differs in patient or labels");
    }
  }
  Comparison c;
  const auto ma = resample_mean_ap(a, {});
  if (!ma) throw ValidationError("compare: no bucket has a positive example");
  c.mean_ap_a = *ma;
  c.mean_ap_b = *resample_mean_ap(b, {});
  c.bootstrap_a = bootstrap(a.size(), [&](std::span<const std::size_t> idx) { return resample_mean_ap(a, idx); },
                            n_resamples, seed);
  c.bootstrap_b = bootstrap(b.size(), [&](std::span<const std::size_t> idx) { return resample_mean_ap(b, idx); },
                            n_resamples, seed);
  c.test = mann_whitney_u(c.bootstrap_a.values, c.bootstrap_b.values);
  return c;
}

}  // namespace zimm
