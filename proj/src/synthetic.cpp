#include "zimm/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <tuple>

#include "zimm/errors.hpp"
#include "zimm/rng.hpp"

namespace zimm {

using nlohmann::json;

namespace {

constexpr std::size_t kGenericDrugs = 112;       // D008..D119
constexpr std::size_t kGenericProcedures = 70;   // P010..P079
constexpr std::size_t kDiagnoses = 90;           // C000..C089
constexpr double kZipfExponent = 1.1;
constexpr std::size_t kHabitBuckets = 4;
constexpr std::size_t kRelapseBuckets = 7;

std::string code(char prefix, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%c%03zu", prefix, i);
  return buf;
}

std::vector<double> zipf_weights(std::size_t n) {
  std::vector<double> w(n);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) total += w[r] = 1.0 / std::pow(static_cast<double>(r + 1), kZipfExponent);
  for (double& v : w) v /= total;
  return w;
}

struct Window {
  std::int32_t lo, hi;
  std::int32_t length() const { return hi - lo + 1; }
};

std::array<Window, kWindows> windows(std::int32_t span) { return {{{1, 90}, {91, 365}, {366, span}}}; }

std::size_t window_of(std::int32_t horizon) { return horizon <= 90 ? 0 : horizon <= 365 ? 1 : 2; }

bool is_urinary(const EventRecord& e) {
  return e.kind == EventKind::drug && e.code.size() == 4 && e.code[0] == 'D' && e.code < urinary_code(kUrinaryCodes);
}

bool is_hospital(const EventRecord& e) {
  return e.kind == EventKind::procedure && e.code.size() == 4 && e.code[0] == 'P' &&
         e.code < hospital_code(kHospitalCodes);
}

std::int32_t uniform_day(RngStream& rng, std::int32_t lo, std::int32_t hi) {
  return lo + static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

std::vector<double> bucket_weights(const SyntheticConfig& c, LatentClass latent) {
  const std::size_t B = c.buckets;
  std::vector<double> w(B, 1.0 / static_cast<double>(B));
  if (latent == LatentClass::habit) {
    const std::array<double, kHabitBuckets> shape = {0.4, 0.3, 0.2, 0.1};
    const double rest = (1.0 - c.focus_mass) / static_cast<double>(B - kHabitBuckets);
    for (std::size_t b = 0; b < B; ++b) w[b] = b < kHabitBuckets ? c.focus_mass * shape[b] : rest;
  } else if (latent == LatentClass::relapse) {
    const std::size_t first = B - kRelapseBuckets;
    const double focus = c.relapse_focus_mass / static_cast<double>(kRelapseBuckets);
    const double rest = (1.0 - c.relapse_focus_mass) / static_cast<double>(first);
    for (std::size_t b = 0; b < B; ++b) w[b] = b >= first ? focus : rest;
  }
  return w;
}

std::uint32_t draw_count(const SyntheticConfig& c, LatentClass latent, RngStream& rng) {
  switch (latent) {
    case LatentClass::none:
      if (rng.bernoulli(c.none_zero_prob)) return 0;
      return rng.bernoulli(0.7) ? 1 : 2;
    case LatentClass::habit:
      return static_cast<std::uint32_t>(std::min<std::uint64_t>(1 + rng.poisson(c.habit_extra_mean), c.buckets));
    case LatentClass::relapse: {
      std::uint32_t n = 0;
      for (std::size_t b = 0; b < c.buckets; ++b) n += rng.bernoulli(c.relapse_binomial_p) ? 1 : 0;
      return n;
    }
  }
  return 0;
}

}  // namespace

const char* latent_class_name(LatentClass c) {
  switch (c) {
    case LatentClass::none: return "none";
    case LatentClass::habit: return "habit";
    case LatentClass::relapse: return "relapse";
  }
  return "?";
}

std::string urinary_code(std::size_t i) { return code('D', i); }
std::string hospital_code(std::size_t i) { return code('P', i); }

void SyntheticConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("synthetic config: " + m); };
  if (patients == 0) fail("patient count must be positive");
  double total = 0.0;
  for (double p : prior) {
    if (p < 0) fail("class prior must be nonnegative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) fail("class prior must sum to 1");
  for (const auto& prof : profiles) {
    for (std::size_t w = 0; w < kWindows; ++w) {
      if (prof.urinary_rate[w] < 0 || prof.hospital_rate[w] < 0) fail("rates must be nonnegative");
      if (!(prof.stay_p[w] > 0 && prof.stay_p[w] <= 1)) fail("stay_p must lie in (0, 1]");
    }
  }
  if (visit_rate < 0 || codes_per_visit < 0 || habit_extra_mean < 0 || late_relapse_mean < 0) {
    fail("rates must be nonnegative");
  }
  if (min_span < 366 || max_span < min_span) fail("need 366 <= min_span <= max_span");
  if (buckets < kHabitBuckets + kRelapseBuckets || bucket_days < 1) fail("need at least 11 buckets");
  for (double p : {second_act_prob, late_act_prob, none_zero_prob, relapse_binomial_p, focus_mass,
                   relapse_focus_mass}) {
    if (p < 0 || p > 1) fail("probabilities must lie in [0, 1]");
  }
}

json SyntheticConfig::to_json() const {
  json profs = json::array();
  for (std::size_t c = 0; c < kLatentClasses; ++c) {
    profs.push_back({{"class", latent_class_name(static_cast<LatentClass>(c))},
                     {"urinary_rate", profiles[c].urinary_rate},
                     {"hospital_rate", profiles[c].hospital_rate},
                     {"stay_p", profiles[c].stay_p}});
  }
  return json{{"patients", patients},
              {"seed", seed},
              {"prior", prior},
              {"profiles", profs},
              {"visit_rate", visit_rate},
              {"codes_per_visit", codes_per_visit},
              {"visit_mix", visit_mix},
              {"min_span", min_span},
              {"max_span", max_span},
              {"second_act_prob", second_act_prob},
              {"late_act_prob", late_act_prob},
              {"buckets", buckets},
              {"bucket_days", bucket_days},
              {"none_zero_prob", none_zero_prob},
              {"habit_extra_mean", habit_extra_mean},
              {"relapse_binomial_p", relapse_binomial_p},
              {"focus_mass", focus_mass},
              {"relapse_focus_mass", relapse_focus_mass},
              {"late_relapse_mean", late_relapse_mean}};
}

SyntheticData generate_synthetic(const SyntheticConfig& c) {
  c.validate();
  const std::vector<double> drug_w = zipf_weights(kGenericDrugs);
  const std::vector<double> proc_w = zipf_weights(kGenericProcedures);
  const std::vector<double> diag_w = zipf_weights(kDiagnoses);
  const Date epoch = Date::from_ymd(2012, 1, 1);
  const RngStream root = RngStream(c.seed).split("synthetic");

  SyntheticData data;
  data.patients.reserve(c.patients);
  data.truth.reserve(c.patients);
  for (std::size_t i = 0; i < c.patients; ++i) {
    RngStream rng = root.split(static_cast<std::uint64_t>(i));
    char id[16];
    std::snprintf(id, sizeof id, "pt%05zu", i);
    SyntheticTruth truth;
    truth.patient_id = id;
    truth.latent = static_cast<LatentClass>(rng.categorical(c.prior));
    const ClassProfile& prof = c.profiles[static_cast<std::size_t>(truth.latent)];
    const int age = 50 + static_cast<int>(rng.below(40));
    const Date T = epoch + static_cast<std::int32_t>(rng.below(1500));
    truth.index_date = T;
    truth.span = uniform_day(rng, c.min_span, c.max_span);
    data.patients.push_back({truth.patient_id, T.year() - age});

    std::vector<EventRecord> evs;
    auto emit = [&](EventKind kind, std::string code, Date start, std::int32_t length) {
      evs.push_back({truth.patient_id, kind, std::move(code), start, start + length});
    };

    // background visits
    const std::uint64_t visits = rng.poisson(c.visit_rate / 30.0 * truth.span);
    for (std::uint64_t v = 0; v < visits; ++v) {
      const Date day = T - uniform_day(rng, 1, truth.span);
      const std::uint64_t codes = 1 + rng.poisson(c.codes_per_visit);
      for (std::uint64_t k = 0; k < codes; ++k) {
        switch (rng.categorical(c.visit_mix)) {
          case 0: emit(EventKind::drug, code('D', kUrinaryCodes + rng.categorical(drug_w)), day, 0); break;
          case 1: emit(EventKind::procedure, code('P', kHospitalCodes + rng.categorical(proc_w)), day, 0); break;
          default: emit(EventKind::diagnosis, code('C', rng.categorical(diag_w)), day, 0); break;
        }
      }
    }

    // informative streams
    const auto wins = windows(truth.span);
    for (std::size_t w = 0; w < kWindows; ++w) {
      const double len = wins[w].length();
      const std::uint64_t purchases = rng.poisson(prof.urinary_rate[w] / 30.0 * len);
      for (std::uint64_t k = 0; k < purchases; ++k) {
        emit(EventKind::drug, urinary_code(rng.below(kUrinaryCodes)), T - uniform_day(rng, wins[w].lo, wins[w].hi),
             0);
      }
      const std::uint64_t stays = rng.poisson(prof.hospital_rate[w] / 30.0 * len);
      for (std::uint64_t k = 0; k < stays; ++k) {
        const Date start = T - uniform_day(rng, wins[w].lo, wins[w].hi);
        const auto length = static_cast<std::int32_t>(1 + rng.geometric(prof.stay_p[w]));
        emit(EventKind::procedure, hospital_code(rng.below(kHospitalCodes)), start, length);
      }
    }

    // surgery block
    emit(EventKind::index_act, kIndexActCode, T, 0);
    if (rng.bernoulli(c.second_act_prob)) emit(EventKind::index_act, kIndexActCode, T - uniform_day(rng, 1, 42), 0);
    if (rng.bernoulli(c.late_act_prob)) {
      truth.late_act = true;
      emit(EventKind::index_act, kIndexActCode, T + uniform_day(rng, 60, 400), 0);
    }

    // labels
    truth.n = draw_count(c, truth.latent, rng);
    const std::vector<double> bw = bucket_weights(c, truth.latent);
    for (std::uint32_t k = 0; k < truth.n; ++k) {
      const auto b = static_cast<std::int32_t>(rng.categorical(bw));
      emit(EventKind::relapse_drug, urinary_code(rng.below(kUrinaryCodes)),
           T + b * c.bucket_days + uniform_day(rng, 1, c.bucket_days), 0);
    }
    if (truth.latent != LatentClass::none) {
      const std::uint64_t late = rng.poisson(c.late_relapse_mean);
      const std::int32_t window_end = static_cast<std::int32_t>(c.buckets) * c.bucket_days;
      for (std::uint64_t k = 0; k < late; ++k) {
        emit(EventKind::relapse_drug, urinary_code(rng.below(kUrinaryCodes)), T + window_end + uniform_day(rng, 1, 360),
             0);
      }
    }

    std::sort(evs.begin(), evs.end(), [](const EventRecord& a, const EventRecord& b) {
      return std::tie(a.start, a.kind, a.code, a.end) < std::tie(b.start, b.kind, b.code, b.end);
    });
    data.events.insert(data.events.end(), evs.begin(), evs.end());
    data.truth.push_back(std::move(truth));
  }
  return data;
}

std::array<double, kLatentClasses> bayes_posterior(const SyntheticConfig& c, const std::vector<EventRecord>& events,
                                                   Date T, std::int32_t span) {
  std::array<std::size_t, kWindows> purchases{}, stays{};
  std::array<std::vector<std::int32_t>, kWindows> lengths;
  for (const auto& e : events) {
    const std::int32_t h = T - e.start;
    if (h < 1 || h > span) continue;
    const std::size_t w = window_of(h);
    if (is_urinary(e)) ++purchases[w];
    if (is_hospital(e)) {
      ++stays[w];
      lengths[w].push_back(e.end - e.start);
    }
  }
  const auto wins = windows(span);
  auto poisson_ll = [](std::size_t k, double mean) {
    if (mean <= 0) return k == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
    return static_cast<double>(k) * std::log(mean) - mean;
  };
  std::array<double, kLatentClasses> logp{};
  for (std::size_t cls = 0; cls < kLatentClasses; ++cls) {
    const ClassProfile& prof = c.profiles[cls];
    double ll = c.prior[cls] > 0 ? std::log(c.prior[cls]) : -std::numeric_limits<double>::infinity();
    for (std::size_t w = 0; w < kWindows; ++w) {
      const double len = wins[w].length();
      ll += poisson_ll(purchases[w], prof.urinary_rate[w] / 30.0 * len);
      ll += poisson_ll(stays[w], prof.hospital_rate[w] / 30.0 * len);
      const double p = prof.stay_p[w];
      for (std::int32_t d : lengths[w]) {
        if (d < 1 || (d > 1 && p == 1.0)) {
          ll = -std::numeric_limits<double>::infinity();
        } else {
          ll += std::log(p) + (d > 1 ? (d - 1) * std::log1p(-p) : 0.0);
        }
      }
    }
    logp[cls] = ll;
  }
  const double top = *std::max_element(logp.begin(), logp.end());
  std::array<double, kLatentClasses> post{};
  double z = 0.0;
  for (std::size_t cls = 0; cls < kLatentClasses; ++cls) z += post[cls] = std::exp(logp[cls] - top);
  for (double& p : post) p /= z;
  return post;
}

std::array<double, kLatentClasses> relapse_probability_by_class(const SyntheticConfig& c) {
  return {1.0 - c.none_zero_prob, 1.0,
          1.0 - std::pow(1.0 - c.relapse_binomial_p, static_cast<double>(c.buckets))};
}

std::vector<double> bayes_relapse_scores(const SyntheticConfig& c, const SyntheticData& data) {
  std::map<std::string, std::vector<EventRecord>> by_patient;
  for (const auto& e : data.events) by_patient[e.patient_id].push_back(e);
  const auto p_relapse = relapse_probability_by_class(c);
  std::vector<double> scores;
  scores.reserve(data.truth.size());
  for (const auto& t : data.truth) {
    const auto post = bayes_posterior(c, by_patient[t.patient_id], t.index_date, t.span);
    double s = 0.0;
    for (std::size_t cls = 0; cls < kLatentClasses; ++cls) s += post[cls] * p_relapse[cls];
    scores.push_back(s);
  }
  return scores;
}

std::string format_truth_line(const SyntheticTruth& t) {
  nlohmann::ordered_json j;
  j["patient_id"] = t.patient_id;
  j["latent_class"] = latent_class_name(t.latent);
  j["index_date"] = t.index_date.to_string();
  j["span"] = t.span;
  j["n"] = t.n;
  j["late_act"] = t.late_act;
  return j.dump();
}

void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir) {
  write_events(dir / "events.jsonl", data.events);
  write_patients(dir / "patients.jsonl", data.patients);
  std::ofstream out(dir / "latent.jsonl", std::ios::binary);
  if (!out) throw ValidationError("cannot write " + (dir / "latent.jsonl").string());
  for (const auto& t : data.truth) out << format_truth_line(t) << '\n';
  if (!out) throw ValidationError("write failed for " + (dir / "latent.jsonl").string());
}

}  // namespace zimm
