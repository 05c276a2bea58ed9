#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ilog/time.hpp"

/// iLogCal experiment plans in iCalendar content-line syntax.
///
/// A document is a sequence of VCALENDAR components, one per calendar. Each
/// carries UID (calendar id) and X-ILOG-USER (the participant set the plan is
/// for) and nests X-ILOG-CONTEXT components, which in turn nest
/// X-ILOG-QUESTION and X-ILOG-SENSOR components. docs/formats.md has the full
/// property list.
namespace ilog::cal {

using Id = std::uint64_t;

enum class Frequency { Millisecond, Second, Minute, Hour, Daily, Weekly, Monthly, Yearly };
enum class Category { WE, WA, WI, WO, WU };
enum class QuestionType { Dichotomous, MultipleChoice, SingleChoice, FreeText };
enum class SensorType { Social, Motion, Location, Inertial, Device, Ambient, Software, QuestionAnswering };

std::string_view to_string(Frequency f);
std::string_view to_string(Category c);
std::string_view to_string(QuestionType t);
std::string_view to_string(SensorType t);
std::optional<Frequency> parse_frequency(std::string_view token);
std::optional<Category> parse_category(std::string_view token);
std::optional<QuestionType> parse_question_type(std::string_view token);
std::optional<SensorType> parse_sensor_type(std::string_view token);

/// Fixed length of one frequency unit; nullopt for Monthly/Yearly.
std::optional<Duration> unit_length(Frequency f);

/// True for the frequencies the base question grammar allows (Daily and up).
bool is_question_frequency(Frequency f);

struct RecurrenceRule {
  Frequency frequency = Frequency::Daily;
  std::uint64_t interval = 1;
  std::uint64_t count = 1;
  bool operator==(const RecurrenceRule&) const = default;
};

/// "FREQ=MINUTELY;INTERVAL=30;COUNT=672"
std::string format_rrule(const RecurrenceRule& r);
/// Accepts the RFC 5545 names plus MILLISECOND/SECOND/MINUTE/HOUR and their
/// X- prefixed forms. Returns an error message on failure.
std::optional<RecurrenceRule> parse_rrule(std::string_view text, std::string* error = nullptr);

/// One raw content line, kept verbatim for properties the plan model does not
/// interpret.
struct ContentLine {
  std::string name;
  std::vector<std::pair<std::string, std::string>> params;
  std::string value;
  bool operator==(const ContentLine&) const = default;
};
using Extensions = std::vector<ContentLine>;

struct Question {
  Id qid = 0;
  Category category = Category::WA;
  std::string content;
  std::vector<std::string> options;
  QuestionType type = QuestionType::SingleChoice;
  std::optional<std::string> answer;
  bool operator==(const Question&) const = default;
};

struct QuestionCollection {
  Id cid = 0;
  Instant dtstart{};
  Instant dtend{};
  bool accepted = true;
  RecurrenceRule rrule;
  Question question;
  Extensions extensions;
  bool operator==(const QuestionCollection&) const = default;
};

struct Sensor {
  std::string name;
  std::string description;
  SensorType type = SensorType::Location;
  bool operator==(const Sensor&) const = default;
};

struct SensorCollection {
  Id sid = 0;
  Instant dtstart{};
  Instant dtend{};
  RecurrenceRule rrule;
  Sensor sensor;
  Extensions extensions;
  bool operator==(const SensorCollection&) const = default;
};

struct ContextCollection {
  Id id = 0;
  std::vector<QuestionCollection> questions;
  std::vector<SensorCollection> sensors;
  Extensions extensions;
  bool operator==(const ContextCollection&) const = default;
};

struct Calendar {
  Id id = 0;
  std::vector<ContextCollection> contexts;
  Extensions extensions;
  bool operator==(const Calendar&) const = default;
};

struct ExperimentPlan {
  std::string user;
  std::vector<Calendar> calendars;
  bool operator==(const ExperimentPlan&) const = default;
};

enum class Severity { Error, Warning };

struct Diagnostic {
  Severity severity;
  std::string path;  // e.g. "calendar[1]/context[2]/question[3].RRULE"
  std::string code;  // stable identifier, e.g. "bad_value", "missing_property"
  std::string message;
  std::size_t line = 0;  // source line when known
};

std::string format_diagnostic(const Diagnostic& d);
std::size_t error_count(const std::vector<Diagnostic>& ds);

/// Parses and validates. Throws SyntaxError for malformed content lines or
/// component nesting, DuplicateIdError / ValidationError for the first
/// error-level diagnostic. Warnings do not throw.
ExperimentPlan parse_plan(std::string_view text);

/// Everything parse_plan would complain about, as diagnostics, without
/// throwing. Syntax errors become a single error diagnostic.
std::vector<Diagnostic> lint_plan(std::string_view text);

/// Deterministic: ids sorted at every level, CRLF line ends, 75-octet folding.
std::string serialize_plan(const ExperimentPlan& plan);

/// Empty iff the plan satisfies every invariant. Sub-daily question
/// frequencies and unreachable COUNTs are warnings.
std::vector<Diagnostic> validate_plan(const ExperimentPlan& plan);

/// Plan with every id-keyed list sorted, the order serialize_plan emits.
ExperimentPlan normalized(ExperimentPlan plan);

// Content-line layer, exposed for tests and for the VEVENT exporter.

/// Folds one logical line to physical lines of at most 75 octets joined by
/// CRLF + space. Never splits a UTF-8 sequence.
std::string fold_line(std::string_view line);
/// Removes CRLF/LF followed by a space or tab.
std::string unfold(std::string_view text);
std::string escape_text(std::string_view s);
std::string unescape_text(std::string_view s);

} // namespace ilog::cal
