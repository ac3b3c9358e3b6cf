#include "zimm/events.hpp"

#include <algorithm>
#include <chrono>
#include <charconv>
#include <fstream>
#include <set>

#include <json.hpp>

#include "zimm/errors.hpp"

namespace zimm {

namespace {

std::string at_line(std::size_t line) { return "line " + std::to_string(line) + ": "; }

bool parse_uint(std::string_view s, unsigned& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

Date Date::parse(std::string_view iso) {
  unsigned y = 0, m = 0, d = 0;
  if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-' || !parse_uint(iso.substr(0, 4), y) ||
      !parse_uint(iso.substr(5, 2), m) || !parse_uint(iso.substr(8, 2), d)) {
    throw ValidationError("malformed date '" + std::string(iso) + "', expected YYYY-MM-DD");
  }
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{static_cast<int>(y)}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw ValidationError("invalid calendar date '" + std::string(iso) + "'");
  return Date{static_cast<std::int32_t>(sys_days(ymd).time_since_epoch().count())};
}

Date Date::from_ymd(int y, unsigned m, unsigned d) {
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw ValidationError("invalid calendar date");
  return Date{static_cast<std::int32_t>(sys_days(ymd).time_since_epoch().count())};
}

std::string Date::to_string() const {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

int Date::year() const {
  using namespace std::chrono;
  return static_cast<int>(year_month_day{sys_days{std::chrono::days{days}}}.year());
}

const char* event_kind_name(EventKind kind) {
  switch (kind) {
    case EventKind::drug: return "drug";
    case EventKind::procedure: return "procedure";
    case EventKind::diagnosis: return "diagnosis";
    case EventKind::index_act: return "index_act";
    case EventKind::relapse_drug: return "relapse_drug";
  }
  return "?";
}

std::optional<EventKind> parse_event_kind(std::string_view name) {
  for (EventKind k : {EventKind::drug, EventKind::procedure, EventKind::diagnosis, EventKind::index_act,
                      EventKind::relapse_drug}) {
    if (name == event_kind_name(k)) return k;
  }
  return std::nullopt;
}

EventRecord parse_event_line(std::string_view line, std::size_t line_number) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(at_line(line_number) + "not a JSON object: " + e.what());
  }
  if (!j.is_object()) throw ValidationError(at_line(line_number) + "not a JSON object");
  static const std::set<std::string> fields = {"patient_id", "kind", "code", "start", "end"};
  for (const auto& f : fields) {
    if (!j.contains(f) || !j[f].is_string()) {
      throw ValidationError(at_line(line_number) + "missing string field '" + f + "'");
    }
  }
  for (const auto& [key, _] : j.items()) {
    if (!fields.count(key)) throw ValidationError(at_line(line_number) + "unknown field '" + key + "'");
  }
  EventRecord e;
  e.patient_id = j["patient_id"].get<std::string>();
  e.code = j["code"].get<std::string>();
  if (e.patient_id.empty()) throw ValidationError(at_line(line_number) + "empty patient_id");
  const auto kind = parse_event_kind(j["kind"].get<std::string>());
  if (!kind) throw ValidationError(at_line(line_number) + "unknown kind '" + j["kind"].get<std::string>() + "'");
  e.kind = *kind;
  try {
    e.start = Date::parse(j["start"].get<std::string>());
    e.end = Date::parse(j["end"].get<std::string>());
  } catch (const ValidationError& err) {
    throw ValidationError(at_line(line_number) + err.what());
  }
  if (e.end < e.start) throw ValidationError(at_line(line_number) + "end date precedes start date");
  return e;
}

std::string format_event_line(const EventRecord& e) {
  nlohmann::ordered_json j;
  j["patient_id"] = e.patient_id;
  j["kind"] = event_kind_name(e.kind);
  j["code"] = e.code;
  j["start"] = e.start.to_string();
  j["end"] = e.end.to_string();
  return j.dump();
}

std::vector<EventRecord> parse_events(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open events file " + path.string());
  std::vector<EventRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_event_line(line, n));
    } catch (const ValidationError& e) {
      throw ValidationError(path.filename().string() + ": " + e.what());
    }
  }
  return out;
}

void write_events(const std::filesystem::path& path, const std::vector<EventRecord>& events) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write events file " + path.string());
  for (const auto& e : events) out << format_event_line(e) << '\n';
  if (!out) throw ValidationError("failed writing " + path.string());
}

std::vector<PatientInfo> parse_patients(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open patients file " + path.string());
  std::vector<PatientInfo> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PatientInfo p;
      p.patient_id = j.at("patient_id").get<std::string>();
      p.birth_year = j.at("birth_year").get<int>();
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.filename().string() + ": " + at_line(n) + e.what());
    }
  }
  return out;
}

void write_patients(const std::filesystem::path& path, const std::vector<PatientInfo>& patients) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write patients file " + path.string());
  for (const auto& p : patients) {
    nlohmann::ordered_json j;
    j["patient_id"] = p.patient_id;
    j["birth_year"] = p.birth_year;
    out << j.dump() << '\n';
  }
}

std::size_t mark_relapse_codes(std::vector<EventRecord>& events, const std::vector<std::string>& codes) {
  const std::set<std::string> wanted(codes.begin(), codes.end());
  std::size_t n = 0;
  for (auto& e : events) {
    if (e.kind == EventKind::drug && wanted.count(e.code)) {
      e.kind = EventKind::relapse_drug;
      ++n;
    }
  }
  return n;
}

}  // namespace zimm
