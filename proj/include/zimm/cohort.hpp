#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "zimm/config.hpp"
#include "zimm/encoder.hpp"
#include "zimm/events.hpp"
#include "zimm/rng.hpp"
#include "zimm/zimm_dist.hpp"

namespace zimm {

// ---- index date -------------------------------------------------------------

enum class Exclusion { none, no_index_act, multiple_blocks, empty_history, unknown_birth_year };
const char* exclusion_name(Exclusion e);

struct IndexResult {
  std::optional<Date> index_date;  // T
  Exclusion exclusion = Exclusion::none;
};

/// Groups index acts within `block_days` of the first act into one block
/// dated at its last act. An act after the block excludes the patient.
IndexResult compute_index(const std::vector<EventRecord>& events, std::int32_t block_days = 42);

// ---- labels -----------------------------------------------------------------

struct LabelResult {
  LabelVector labels;
  std::uint32_t in_window = 0;  // relapse events with 1 <= d <= B * bucket_days
  std::uint32_t clipped = 0;    // removed to keep n <= B
};

/// Event at d = date - T days, 1 <= d <= B * bucket_days, lands in bucket
/// ceil(d / bucket_days). When n exceeds B, events are removed from the most
/// populated bucket (lowest index on ties) until n == B.
LabelResult build_labels(const std::vector<Date>& relapse_dates, Date index_date, std::size_t buckets = 18,
                         std::size_t bucket_days = 30);

// ---- vocabulary -------------------------------------------------------------

/// Per code type token -> id maps. Id 0 is the no-code / out-of-vocabulary
/// token; ids are assigned by descending training count, ties broken
/// lexicographically.
class VocabMap {
 public:
  VocabMap();

  std::size_t size(CodeType type) const { return tokens_[idx(type)].size(); }
  /// 0 when the token is unknown.
  std::size_t id(CodeType type, const std::string& token) const;
  const std::string& token(CodeType type, std::size_t id) const { return tokens_[idx(type)].at(id); }
  std::size_t min_count() const { return min_count_; }
  std::uint64_t count(CodeType type, std::size_t id) const { return counts_[idx(type)].at(id); }

  nlohmann::json to_json() const;
  static VocabMap from_json(const nlohmann::json& j);
  /// Hash of the canonical JSON form.
  std::string hash() const;

  bool operator==(const VocabMap& o) const { return tokens_ == o.tokens_ && min_count_ == o.min_count_; }

  friend VocabMap build_vocab(const std::vector<EventRecord>& events, std::size_t min_count);

 private:
  static std::size_t idx(CodeType t) { return static_cast<std::size_t>(t); }
  void rebuild_index();

  std::array<std::vector<std::string>, kCodeTypes> tokens_;
  std::array<std::vector<std::uint64_t>, kCodeTypes> counts_;
  std::array<std::unordered_map<std::string, std::size_t>, kCodeTypes> ids_;
  std::size_t min_count_ = 50;
};

/// Counts history codes (drug / procedure / diagnosis, with relapse_drug
/// counted as drug) and keeps those seen at least `min_count` times.
VocabMap build_vocab(const std::vector<EventRecord>& events, std::size_t min_count = 50);

/// Code type of a history event, or nullopt for index acts.
std::optional<CodeType> history_code_type(EventKind kind);

// ---- history ----------------------------------------------------------------

/// One tokenized pre-index event, kept in full for count features.
struct HistoryEvent {
  std::int32_t horizon = 0;  // T - start, >= 1
  CodeType type = CodeType::drug;
  std::size_t token = 0;
  std::int32_t duration = 0;

  bool operator==(const HistoryEvent&) const = default;
};

struct HistoryLimits {
  std::size_t max_days = 50;
  std::size_t max_events_per_day = 24;
};

struct HistoryResult {
  PatientSequence sequence;
  std::vector<HistoryEvent> events;
  std::size_t oov = 0;
  std::size_t truncated_codes = 0;
  std::size_t dropped_days = 0;
};

/// Keeps events strictly before T, groups them by start day, shuffles each day
/// with `rng`, truncates to max_events_per_day codes, and keeps the max_days
/// most recent days in chronological order. A day's duration token is the
/// longest end - start among its kept events.
HistoryResult build_history(const std::vector<EventRecord>& events, Date index_date, const VocabMap& vocab,
                            const HistoryLimits& limits, RngStream& rng);

// ---- cohort -----------------------------------------------------------------

struct CohortEntry {
  std::string patient_id;
  Date index_date;
  int age = 0;
  PatientSequence sequence;
  LabelVector labels;
  std::vector<HistoryEvent> history;
  std::uint32_t relapse_in_window = 0;
  std::uint32_t clipped = 0;

  bool operator==(const CohortEntry&) const = default;
};

struct CohortReport {
  std::size_t patients = 0;
  std::size_t included = 0;
  std::map<std::string, std::size_t> excluded;
  std::size_t clipped_events = 0;
  std::size_t oov_codes = 0;
  std::size_t truncated_codes = 0;
  std::size_t dropped_days = 0;

  nlohmann::json to_json() const;
  bool operator==(const CohortReport&) const = default;
};

struct Split {
  std::vector<std::string> train, val, test;
};

/// Seeded patient-level split. Sizes are round(f_train * n), round(f_val * n)
/// and the remainder; every part must be non-empty.
Split split_patients(std::vector<std::string> ids, std::array<double, 3> fractions, std::uint64_t seed);

struct Cohort {
  ModelConfig::Preprocessing preprocessing;
  std::uint64_t seed = 0;
  VocabMap vocab;
  std::vector<CohortEntry> train, val, test;
  CohortReport report;

  const std::vector<CohortEntry>& split(const std::string& name) const;
  bool operator==(const Cohort& o) const {
    return preprocessing == o.preprocessing && seed == o.seed && vocab == o.vocab && train == o.train &&
           val == o.val && test == o.test && report == o.report;
  }
};

/// index dates -> split -> training vocabulary -> histories and labels.
Cohort build_cohort(const std::vector<EventRecord>& events, const std::vector<PatientInfo>& patients,
                    const ModelConfig::Preprocessing& preprocessing, std::uint64_t seed);

/// Cohort cache container ("ZIMMCOHT", version 1).
void save_cohort(const Cohort& cohort, const std::filesystem::path& path);
Cohort load_cohort(const std::filesystem::path& path);

/// Model configuration with vocabulary sizes and limits taken from the cohort.
ModelConfig fit_config_to_cohort(ModelConfig config, const Cohort& cohort);

}  // namespace zimm
