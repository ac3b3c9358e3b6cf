#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace zimm {

/// Calendar day, counted from 1970-01-01.
struct Date {
  std::int32_t days = 0;

  static Date parse(std::string_view iso);  // YYYY-MM-DD, throws ValidationError
  static Date from_ymd(int year, unsigned month, unsigned day);
  std::string to_string() const;
  int year() const;

  auto operator<=>(const Date&) const = default;
};

inline std::int32_t operator-(Date a, Date b) { return a.days - b.days; }
inline Date operator+(Date a, std::int32_t d) { return Date{a.days + d}; }
inline Date operator-(Date a, std::int32_t d) { return Date{a.days - d}; }

enum class EventKind { drug, procedure, diagnosis, index_act, relapse_drug };

const char* event_kind_name(EventKind kind);
std::optional<EventKind> parse_event_kind(std::string_view name);

struct EventRecord {
  std::string patient_id;
  EventKind kind = EventKind::drug;
  std::string code;
  Date start;
  Date end;

  bool operator==(const EventRecord&) const = default;
};

struct PatientInfo {
  std::string patient_id;
  int birth_year = 0;
};

/// One JSON object per line: patient_id, kind, code, start, end. Errors carry
/// the 1-based line number.
std::vector<EventRecord> parse_events(const std::filesystem::path& path);
EventRecord parse_event_line(std::string_view line, std::size_t line_number);
std::string format_event_line(const EventRecord& e);
void write_events(const std::filesystem::path& path, const std::vector<EventRecord>& events);

/// One JSON object per line: patient_id, birth_year.
std::vector<PatientInfo> parse_patients(const std::filesystem::path& path);
void write_patients(const std::filesystem::path& path, const std::vector<PatientInfo>& patients);

/// Rewrites drug events whose code is in `codes` as relapse_drug events, for
/// producers that only have generic drug purchases plus a code list.
std::size_t mark_relapse_codes(std::vector<EventRecord>& events, const std::vector<std::string>& codes);

}  // namespace zimm
