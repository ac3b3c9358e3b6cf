#include "zimm/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <tuple>

#include "zimm/container.hpp"
#include "zimm/errors.hpp"

namespace zimm {

using nlohmann::json;

const char* exclusion_name(Exclusion e) {
  switch (e) {
    case Exclusion::none: return "none";
    case Exclusion::no_index_act: return "no_index_act";
    case Exclusion::multiple_blocks: return "multiple_surgery_blocks";
    case Exclusion::empty_history: return "empty_history";
    case Exclusion::unknown_birth_year: return "unknown_birth_year";
  }
  return "?";
}

IndexResult compute_index(const std::vector<EventRecord>& events, std::int32_t block_days) {
  std::vector<Date> acts;
  for (const auto& e : events) {
    if (e.kind == EventKind::index_act) acts.push_back(e.start);
  }
  IndexResult r;
  if (acts.empty()) {
    r.exclusion = Exclusion::no_index_act;
    return r;
  }
  std::sort(acts.begin(), acts.end());
  const Date first = acts.front();
  Date last = first;
  for (Date d : acts) {
    if (d - first > block_days) {
      r.exclusion = Exclusion::multiple_blocks;
      return r;
    }
    last = d;
  }
  r.index_date = last;
  return r;
}

LabelResult build_labels(const std::vector<Date>& relapse_dates, Date index_date, std::size_t buckets,
                         std::size_t bucket_days) {
  LabelResult r;
  r.labels.y.assign(buckets, 0);
  const std::int64_t window = static_cast<std::int64_t>(buckets * bucket_days);
  for (Date d : relapse_dates) {
    const std::int64_t offset = d - index_date;
    if (offset < 1 || offset > window) continue;
    const auto bucket = static_cast<std::size_t>((offset + static_cast<std::int64_t>(bucket_days) - 1) /
                                                 static_cast<std::int64_t>(bucket_days));
    ++r.labels.y[bucket - 1];
    ++r.in_window;
  }
  while (r.labels.n() > buckets) {
    auto it = std::max_element(r.labels.y.begin(), r.labels.y.end());
    --*it;
    ++r.clipped;
  }
  return r;
}

// ---- vocabulary ---------------------------------------------------------------

std::optional<CodeType> history_code_type(EventKind kind) {
  switch (kind) {
    case EventKind::drug:
    case EventKind::relapse_drug: return CodeType::drug;
    case EventKind::procedure: return CodeType::procedure;
    case EventKind::diagnosis: return CodeType::diagnosis;
    case EventKind::index_act: return std::nullopt;
  }
  return std::nullopt;
}

VocabMap::VocabMap() {
  for (std::size_t t = 0; t < kCodeTypes; ++t) {
    tokens_[t] = {"<none>"};
    counts_[t] = {0};
  }
  rebuild_index();
}

void VocabMap::rebuild_index() {
  for (std::size_t t = 0; t < kCodeTypes; ++t) {
    ids_[t].clear();
    for (std::size_t i = 1; i < tokens_[t].size(); ++i) ids_[t].emplace(tokens_[t][i], i);
  }
}

std::size_t VocabMap::id(CodeType type, const std::string& token) const {
  const auto& m = ids_[idx(type)];
  auto it = m.find(token);
  return it == m.end() ? 0 : it->second;
}

json VocabMap::to_json() const {
  json j;
  j["min_count"] = min_count_;
  for (CodeType t : kAllCodeTypes) {
    j["tokens"][code_type_name(t)] = tokens_[idx(t)];
    j["counts"][code_type_name(t)] = counts_[idx(t)];
  }
  return j;
}

VocabMap VocabMap::from_json(const json& j) {
  VocabMap v;
  v.min_count_ = j.at("min_count").get<std::size_t>();
  for (CodeType t : kAllCodeTypes) {
    v.tokens_[idx(t)] = j.at("tokens").at(code_type_name(t)).get<std::vector<std::string>>();
    v.counts_[idx(t)] = j.at("counts").at(code_type_name(t)).get<std::vector<std::uint64_t>>();
    if (v.tokens_[idx(t)].empty() || v.tokens_[idx(t)].size() != v.counts_[idx(t)].size()) {
      throw ValidationError("corrupt vocabulary table");
    }
  }
  v.rebuild_index();
  return v;
}

std::string VocabMap::hash() const { return hash_hex(fnv1a64(to_json().dump())); }

VocabMap build_vocab(const std::vector<EventRecord>& events, std::size_t min_count) {
  std::array<std::map<std::string, std::uint64_t>, kCodeTypes> counts;
  for (const auto& e : events) {
    if (auto t = history_code_type(e.kind)) ++counts[static_cast<std::size_t>(*t)][e.code];
  }
  VocabMap v;
  v.min_count_ = min_count;
  for (std::size_t t = 0; t < kCodeTypes; ++t) {
    std::vector<std::pair<std::string, std::uint64_t>> kept;
    for (const auto& [code, n] : counts[t]) {
      if (n >= min_count) kept.emplace_back(code, n);
    }
    std::stable_sort(kept.begin(), kept.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& [code, n] : kept) {
      v.tokens_[t].push_back(code);
      v.counts_[t].push_back(n);
    }
  }
  v.rebuild_index();
  return v;
}

// ---- history ------------------------------------------------------------------

HistoryResult build_history(const std::vector<EventRecord>& events, Date index_date, const VocabMap& vocab,
                            const HistoryLimits& limits, RngStream& rng) {
  struct Item {
    CodeType type;
    std::size_t token;
    std::string code;
    std::int32_t duration;
  };
  std::map<Date, std::vector<Item>> by_day;
  HistoryResult r;
  for (const auto& e : events) {
    auto type = history_code_type(e.kind);
    if (!type || !(e.start < index_date)) continue;
    const std::size_t token = vocab.id(*type, e.code);
    if (token == 0) ++r.oov;
    const std::int32_t duration = e.end - e.start;
    by_day[e.start].push_back({*type, token, e.code, duration});
    r.events.push_back({index_date - e.start, *type, token, duration});
  }
  // oldest first
  std::sort(r.events.begin(), r.events.end(), [](const HistoryEvent& a, const HistoryEvent& b) {
    return std::make_tuple(-a.horizon, a.type, a.token, a.duration) <
           std::make_tuple(-b.horizon, b.type, b.token, b.duration);
  });

  std::vector<DayInput> days;
  days.reserve(by_day.size());
  for (auto& [day, items] : by_day) {
    // canonical order first so the shuffle only depends on the rng
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
      return std::tie(a.type, a.code, a.duration) < std::tie(b.type, b.code, b.duration);
    });
    rng.shuffle(items);
    if (items.size() > limits.max_events_per_day) {
      r.truncated_codes += items.size() - limits.max_events_per_day;
      items.resize(limits.max_events_per_day);
    }
    DayInput d;
    std::int32_t longest = 0;
    for (const Item& it : items) {
      d.codes[static_cast<std::size_t>(it.type)].push_back(it.token);
      longest = std::max(longest, it.duration);
    }
    d.horizon_token = horizon_token(index_date - day);
    d.duration_token = duration_token(longest);
    days.push_back(std::move(d));
  }
  if (days.size() > limits.max_days) {
    r.dropped_days = days.size() - limits.max_days;
    days.erase(days.begin(), days.begin() + static_cast<std::ptrdiff_t>(r.dropped_days));
  }
  r.sequence.days = std::move(days);
  return r;
}

// ---- splitting ------------------------------------------------------------------

Split split_patients(std::vector<std::string> ids, std::array<double, 3> fractions, std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9 || fractions[0] < 0 || fractions[1] < 0 || fractions[2] < 0) {
    throw ValidationError("split fractions must be nonnegative and sum to 1");
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw ValidationError("split: duplicate patient id");
  }
  const std::size_t n = ids.size();
  const auto n_train = static_cast<std::size_t>(std::floor(fractions[0] * static_cast<double>(n) + 0.5));
  const auto n_val = static_cast<std::size_t>(std::floor(fractions[1] * static_cast<double>(n) + 0.5));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
    throw ValidationError("split: " + std::to_string(n) + " patients cannot fill three non-empty splits");
  }
  RngStream rng = RngStream(seed).split("split");
  rng.shuffle(ids);
  Split s;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
               ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  return s;
}

// ---- cohort -------------------------------------------------------------------

json CohortReport::to_json() const {
  return json{{"patients", patients},
              {"included", included},
              {"excluded", excluded},
              {"clipped_events", clipped_events},
              {"oov_codes", oov_codes},
              {"truncated_codes", truncated_codes},
              {"dropped_days", dropped_days}};
}

const std::vector<CohortEntry>& Cohort::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw ValidationError("unknown split '" + name + "' (expected train, val or test)");
}

Cohort build_cohort(const std::vector<EventRecord>& events, const std::vector<PatientInfo>& patients,
                    const ModelConfig::Preprocessing& pre, std::uint64_t seed) {
  std::map<std::string, std::vector<EventRecord>> by_patient;
  for (const auto& e : events) by_patient[e.patient_id].push_back(e);
  std::map<std::string, int> birth_year;
  for (const auto& p : patients) birth_year[p.patient_id] = p.birth_year;

  Cohort c;
  c.preprocessing = pre;
  c.seed = seed;
  c.report.patients = by_patient.size();

  std::map<std::string, Date> index_dates;
  auto exclude = [&](Exclusion e) { ++c.report.excluded[exclusion_name(e)]; };
  for (const auto& [id, evs] : by_patient) {
    const IndexResult idx = compute_index(evs, static_cast<std::int32_t>(pre.block_days));
    if (!idx.index_date) {
      exclude(idx.exclusion);
      continue;
    }
    const Date T = *idx.index_date;
    const bool has_history = std::any_of(evs.begin(), evs.end(), [&](const EventRecord& e) {
      return history_code_type(e.kind) && e.start < T;
    });
    if (!has_history) {
      exclude(Exclusion::empty_history);
      continue;
    }
    if (!birth_year.count(id)) {
      exclude(Exclusion::unknown_birth_year);
      continue;
    }
    index_dates.emplace(id, T);
  }

  std::vector<std::string> ids;
  for (const auto& [id, _] : index_dates) ids.push_back(id);
  const Split split = split_patients(ids, {0.70, 0.15, 0.15}, seed);

  std::vector<EventRecord> train_history;
  for (const auto& id : split.train) {
    const Date T = index_dates.at(id);
    for (const auto& e : by_patient.at(id)) {
      if (history_code_type(e.kind) && e.start < T) train_history.push_back(e);
    }
  }
  c.vocab = build_vocab(train_history, pre.min_count);

  const HistoryLimits limits{pre.max_days, pre.max_events_per_day};
  const RngStream history_rng = RngStream(seed).split("history");
  auto make_entry = [&](const std::string& id) {
    const auto& evs = by_patient.at(id);
    CohortEntry entry;
    entry.patient_id = id;
    entry.index_date = index_dates.at(id);
    entry.age = entry.index_date.year() - birth_year.at(id);
    RngStream rng = history_rng.split(id);
    HistoryResult h = build_history(evs, entry.index_date, c.vocab, limits, rng);
    entry.sequence = std::move(h.sequence);
    entry.sequence.age_token = age_token(entry.age);
    entry.history = std::move(h.events);
    std::vector<Date> relapses;
    for (const auto& e : evs) {
      if (e.kind == EventKind::relapse_drug) relapses.push_back(e.start);
    }
    LabelResult lab = build_labels(relapses, entry.index_date, pre.buckets, pre.bucket_days);
    entry.labels = std::move(lab.labels);
    entry.relapse_in_window = lab.in_window;
    entry.clipped = lab.clipped;
    c.report.clipped_events += lab.clipped;
    c.report.oov_codes += h.oov;
    c.report.truncated_codes += h.truncated_codes;
    c.report.dropped_days += h.dropped_days;
    return entry;
  };
  for (const auto& id : split.train) c.train.push_back(make_entry(id));
  for (const auto& id : split.val) c.val.push_back(make_entry(id));
  for (const auto& id : split.test) c.test.push_back(make_entry(id));
  c.report.included = ids.size();
  return c;
}

// ---- cache --------------------------------------------------------------------

namespace {

json sequence_to_json(const PatientSequence& s) {
  json days = json::array();
  for (const auto& d : s.days) {
    days.push_back(json::array({d.codes[0], d.codes[1], d.codes[2], d.horizon_token, d.duration_token}));
  }
  return json{{"days", days}, {"mask", s.mask}, {"age_token", s.age_token}};
}

PatientSequence sequence_from_json(const json& j) {
  PatientSequence s;
  for (const auto& d : j.at("days")) {
    DayInput day;
    for (std::size_t t = 0; t < kCodeTypes; ++t) day.codes[t] = d.at(t).get<std::vector<std::size_t>>();
    day.horizon_token = d.at(3).get<std::size_t>();
    day.duration_token = d.at(4).get<std::size_t>();
    s.days.push_back(std::move(day));
  }
  s.mask = j.at("mask").get<std::vector<std::uint8_t>>();
  s.age_token = j.at("age_token").get<std::size_t>();
  return s;
}

json entry_to_json(const CohortEntry& e) {
  json history = json::array();
  for (const auto& h : e.history) {
    history.push_back(json::array({h.horizon, static_cast<std::size_t>(h.type), h.token, h.duration}));
  }
  return json{{"patient_id", e.patient_id},
              {"index_date", e.index_date.to_string()},
              {"age", e.age},
              {"sequence", sequence_to_json(e.sequence)},
              {"labels", e.labels.y},
              {"history", history},
              {"relapse_in_window", e.relapse_in_window},
              {"clipped", e.clipped}};
}

CohortEntry entry_from_json(const json& j) {
  CohortEntry e;
  e.patient_id = j.at("patient_id").get<std::string>();
  e.index_date = Date::parse(j.at("index_date").get<std::string>());
  e.age = j.at("age").get<int>();
  e.sequence = sequence_from_json(j.at("sequence"));
  e.labels.y = j.at("labels").get<std::vector<std::uint32_t>>();
  for (const auto& h : j.at("history")) {
    e.history.push_back({h.at(0).get<std::int32_t>(), static_cast<CodeType>(h.at(1).get<std::size_t>()),
                         h.at(2).get<std::size_t>(), h.at(3).get<std::int32_t>()});
  }
  e.relapse_in_window = j.at("relapse_in_window").get<std::uint32_t>();
  e.clipped = j.at("clipped").get<std::uint32_t>();
  return e;
}

json preprocessing_to_json(const ModelConfig::Preprocessing& p) {
  ModelConfig c;
  c.preprocessing = p;
  return c.to_json().at("preprocessing");
}

}  // namespace

void save_cohort(const Cohort& cohort, const std::filesystem::path& path) {
  Container c;
  c.magic = "ZIMMCOHT";
  c.version = 1;
  c.header["preprocessing"] = preprocessing_to_json(cohort.preprocessing);
  c.header["seed"] = cohort.seed;
  c.header["vocab"] = cohort.vocab.to_json();
  c.header["vocab_hash"] = cohort.vocab.hash();
  c.header["report"] = cohort.report.to_json();
  for (const char* name : {"train", "val", "test"}) {
    json entries = json::array();
    for (const auto& e : cohort.split(name)) entries.push_back(entry_to_json(e));
    c.header["splits"][name] = std::move(entries);
  }
  write_container(path, c);
}

Cohort load_cohort(const std::filesystem::path& path) {
  const Container c = read_container(path, "ZIMMCOHT", 1);
  Cohort cohort;
  try {
    cohort.preprocessing = ModelConfig::from_json(json{{"preprocessing", c.header.at("preprocessing")}}).preprocessing;
    cohort.seed = c.header.at("seed").get<std::uint64_t>();
    cohort.vocab = VocabMap::from_json(c.header.at("vocab"));
    if (cohort.vocab.hash() != c.header.at("vocab_hash").get<std::string>()) {
      throw IntegrityError("cohort vocabulary hash mismatch in " + path.string());
    }
    const json& r = c.header.at("report");
    cohort.report.patients = r.at("patients").get<std::size_t>();
    cohort.report.included = r.at("included").get<std::size_t>();
    cohort.report.excluded = r.at("excluded").get<std::map<std::string, std::size_t>>();
    cohort.report.clipped_events = r.at("clipped_events").get<std::size_t>();
    cohort.report.oov_codes = r.at("oov_codes").get<std::size_t>();
    cohort.report.truncated_codes = r.at("truncated_codes").get<std::size_t>();
    cohort.report.dropped_days = r.at("dropped_days").get<std::size_t>();
    for (const auto& e : c.header.at("splits").at("train")) cohort.train.push_back(entry_from_json(e));
    for (const auto& e : c.header.at("splits").at("val")) cohort.val.push_back(entry_from_json(e));
    for (const auto& e : c.header.at("splits").at("test")) cohort.test.push_back(entry_from_json(e));
  } catch (const json::exception& e) {
    throw ValidationError("corrupt cohort cache " + path.string() + ": " + e.what());
  }
  return cohort;
}

ModelConfig fit_config_to_cohort(ModelConfig config, const Cohort& cohort) {
  const std::size_t min_count = config.preprocessing.min_count;
  config.preprocessing = cohort.preprocessing;
  config.preprocessing.min_count = min_count;
  config.preprocessing.drug_vocab = cohort.vocab.size(CodeType::drug);
  config.preprocessing.procedure_vocab = cohort.vocab.size(CodeType::procedure);
  config.preprocessing.diagnosis_vocab = cohort.vocab.size(CodeType::diagnosis);
  return config;
}

}  // namespace zimm
