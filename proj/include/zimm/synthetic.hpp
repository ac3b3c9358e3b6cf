#pragma once

// Synthetic claims cohort with a planted latent class per patient.
//
// Each patient draws a class in {none, habit, relapse}. The history mixes
// class-independent visits (generic drugs, procedures, diagnoses) with two
// informative streams: urinary-drug purchases and hospital stays, both
// inhomogeneous Poisson processes over three horizon windows. Relapse-class
// patients concentrate both streams in the last 90 days and stay longer in
// hospital. Labels follow a class-conditional count/bucket process:
//   none    n = 0 w.p. 0.8, otherwise 1 or 2 events in uniform buckets
//   habit   n = 1 + Poisson, buckets 1..4 favoured
//   relapse n ~ Binomial(B, p), buckets 12..18 favoured

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "zimm/events.hpp"

namespace zimm {

enum class LatentClass : std::size_t { none = 0, habit = 1, relapse = 2 };
inline constexpr std::size_t kLatentClasses = 3;
const char* latent_class_name(LatentClass c);

/// Horizon windows (days before T): recent 1..90, mid 91..365, old 366..span.
inline constexpr std::size_t kWindows = 3;

struct ClassProfile {
  std::array<double, kWindows> urinary_rate;   // purchases per 30 days
  std::array<double, kWindows> hospital_rate;  // stays per 30 days
  std::array<double, kWindows> stay_p;         // stay length = 1 + Geometric(p)
};

struct SyntheticConfig {
  std::size_t patients = 10000;
  std::uint64_t seed = 42;
  std::array<double, kLatentClasses> prior = {0.5, 0.25, 0.25};
  std::array<ClassProfile, kLatentClasses> profiles = {{
      {{0.10, 0.10, 0.15}, {0.05, 0.05, 0.05}, {0.6, 0.6, 0.6}},
      {{0.40, 0.40, 0.40}, {0.08, 0.08, 0.08}, {0.6, 0.6, 0.6}},
      {{1.50, 0.30, 0.10}, {0.40, 0.08, 0.05}, {0.15, 0.6, 0.6}},
  }};

  // class-independent background
  double visit_rate = 0.6;         // visits per 30 days
  double codes_per_visit = 1.5;    // extra codes beyond the first, Poisson mean
  std::array<double, 3> visit_mix = {0.5, 0.2, 0.3};  // drug, procedure, diagnosis
  std::int32_t min_span = 540;     // observation days before T
  std::int32_t max_span = 1500;
  double second_act_prob = 0.3;    // a second act inside the surgery block
  double late_act_prob = 0.03;     // an act after the block (excluded)

  // labels
  std::size_t buckets = 18;
  std::int32_t bucket_days = 30;
  double none_zero_prob = 0.8;
  double habit_extra_mean = 0.8;
  double relapse_binomial_p = 0.8;
  double focus_mass = 0.9;         // habit mass on buckets 1..4
  double relapse_focus_mass = 0.8; // relapse mass on buckets 12..18
  double late_relapse_mean = 1.0;  // events after the label window, non-none classes

  void validate() const;
  nlohmann::json to_json() const;
};

struct SyntheticTruth {
  std::string patient_id;
  LatentClass latent = LatentClass::none;
  Date index_date;
  std::int32_t span = 0;
  std::uint32_t n = 0;  // events generated inside the label window
  bool late_act = false;
};

struct SyntheticData {
  std::vector<EventRecord> events;
  std::vector<PatientInfo> patients;
  std::vector<SyntheticTruth> truth;
};

/// Code tables used by the generator.
std::string urinary_code(std::size_t i);   // D000..D007
std::string hospital_code(std::size_t i);  // P000..P009
inline constexpr std::size_t kUrinaryCodes = 8;
inline constexpr std::size_t kHospitalCodes = 10;
inline constexpr const char* kIndexActCode = "TURP";

SyntheticData generate_synthetic(const SyntheticConfig& config);

/// Posterior class probabilities from the generator's own likelihoods, given
/// the patient's events, index date and observation span.
std::array<double, kLatentClasses> bayes_posterior(const SyntheticConfig& config,
                                                   const std::vector<EventRecord>& events, Date index_date,
                                                   std::int32_t span);

/// P(n > 0 | class).
std::array<double, kLatentClasses> relapse_probability_by_class(const SyntheticConfig& config);

/// Oracle relapse score sum_c posterior_c * P(n > 0 | c), one per truth entry
/// (patients with a late act included).
std::vector<double> bayes_relapse_scores(const SyntheticConfig& config, const SyntheticData& data);

/// events.jsonl, patients.jsonl, latent.jsonl.
void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir);
std::string format_truth_line(const SyntheticTruth& t);

}  // namespace zimm
