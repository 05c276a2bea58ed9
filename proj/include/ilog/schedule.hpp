#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ilog/context.hpp"
#include "ilog/ilogcal.hpp"
#include "ilog/recurrence.hpp"
#include "ilog/time.hpp"

namespace ilog::schedule {

using namespace std::chrono_literals;

inline constexpr std::uint64_t kDefaultExpansionCap = 10'000'000;

/// Instants dtstart + k * step for k = 0.., stopping at COUNT or dtend
/// (exclusive). Throws OverflowError past `cap` occurrences.
std::vector<Instant> expand(const cal::RecurrenceRule& rule, Instant dtstart, Instant dtend,
                            std::uint64_t cap = kDefaultExpansionCap);

enum class SourceKind { Question, Sensor };

/// Collection ids are only unique inside their context collection, so the
/// reference carries the whole path.
struct SourceRef {
  cal::Id calendar = 0;
  cal::Id context = 0;
  cal::Id collection = 0;
  SourceKind kind = SourceKind::Question;
  auto operator<=>(const SourceRef&) const = default;
};

std::string to_string(const SourceRef& s);  // "2/1/Q3", "2/1/S1"
std::optional<SourceRef> parse_source(std::string_view s);

struct Occurrence {
  SourceRef source;
  std::uint64_t seq_no = 0;
  Instant scheduled_at{};
  Instant window_end{};  // next occurrence of the same collection, capped at dtend
  bool operator==(const Occurrence&) const = default;
};

enum class Actor { Researcher, Participant, Platform };
std::string_view to_string(Actor a);
std::optional<Actor> parse_actor(std::string_view s);

struct Shift {
  Duration delta{};
  bool operator==(const Shift&) const = default;
};
struct Cancel {
  bool operator==(const Cancel&) const = default;
};
struct FrequencyOverride {
  cal::RecurrenceRule rule;
  bool operator==(const FrequencyOverride&) const = default;
};
struct Reinstate {
  bool operator==(const Reinstate&) const = default;
};
using Change = std::variant<Shift, Cancel, FrequencyOverride, Reinstate>;

struct OccurrenceTarget {
  SourceRef source;
  std::uint64_t seq_no = 0;
  bool operator==(const OccurrenceTarget&) const = default;
};
struct CollectionTarget {
  SourceRef source;
  bool operator==(const CollectionTarget&) const = default;
};
/// Every occurrence with scheduled_at in [from, to), optionally of one kind.
struct SpanTarget {
  Instant from{};
  Instant to{};
  std::optional<SourceKind> kind;
  bool operator==(const SpanTarget&) const = default;
};
using Target = std::variant<OccurrenceTarget, CollectionTarget, SpanTarget>;

struct Revision {
  Actor actor = Actor::Researcher;
  std::string participant;  // whose timeline; empty = every participant (researcher only)
  Target target;
  Change change;
  Instant issued_at{};
  bool operator==(const Revision&) const = default;
};

struct RevisionPolicy {
  Duration max_participant_shift = 60min;
  int max_participant_cancels_per_day = 4;
  Duration platform_shift_window = 30min;
  std::set<SourceRef> frozen_collections;
  bool operator==(const RevisionPolicy&) const = default;
};

struct AuditRecord {
  Revision revision;
  std::uint64_t affected = 0;
  std::string note;  // e.g. reinstating a collection the participant rejected
  bool operator==(const AuditRecord&) const = default;
};

struct CollectionState {
  SourceRef source;
  Instant dtstart{};
  Instant dtend{};
  cal::RecurrenceRule rrule;
  bool accepted = true;
  bool operator==(const CollectionState&) const = default;
};

struct Entry {
  Occurrence occurrence;
  bool cancelled = false;
  std::optional<Actor> cancelled_by;
  bool operator==(const Entry&) const = default;
};

/// One participant's schedule: the compiled collections, the current entries
/// (sorted by scheduled_at, then source, then seq_no) and the audit log that
/// produced them from the compiled state.
struct Timeline {
  std::string participant;
  std::vector<CollectionState> collections;
  std::vector<Entry> entries;
  std::vector<AuditRecord> audit;

  std::uint64_t version() const { return audit.size(); }
  const CollectionState* collection(const SourceRef& s) const;
  bool operator==(const Timeline&) const = default;
};

/// Per-participant timelines of every accepted collection. Rejected
/// (STATUS:0) collections are kept in `collections` but contribute no entries.
/// Expansion errors are rethrown with the collection path attached.
std::map<std::string, Timeline> compile(const cal::ExperimentPlan& plan,
                                        const std::vector<context::ParticipantProfile>& participants,
                                        std::uint64_t cap = kDefaultExpansionCap);

Timeline compile_one(const cal::ExperimentPlan& plan, const std::string& participant,
                     std::uint64_t cap = kDefaultExpansionCap);

/// Applies rev under the researcher > participant > platform hierarchy and
/// appends an audit record. Throws PolicyViolation when a participant or
/// platform revision exceeds its bounds, ImmutablePast when it targets an
/// elapsed occurrence, ValidationError for malformed revisions.
Timeline apply_revision(Timeline timeline, const Revision& rev, const RevisionPolicy& policy);

/// Re-applies an audit log to a freshly compiled timeline. No policy checks:
/// every record was admitted when it was first applied.
Timeline replay(Timeline compiled, const std::vector<AuditRecord>& audit);

/// Earliest non-cancelled occurrence with scheduled_at >= now.
std::optional<Occurrence> next_due(const Timeline& timeline, Instant now);

/// Non-cancelled occurrences of one kind, in timeline order.
std::vector<Occurrence> active(const Timeline& timeline, std::optional<SourceKind> kind = std::nullopt);

/// One JSON record per occurrence; see docs/formats.md.
std::string export_records(const Timeline& timeline);
/// VCALENDAR with one VEVENT per occurrence, for external calendar clients.
std::string export_vevents(const Timeline& timeline, const cal::ExperimentPlan& plan);

// JSON forms used by the service and its audit log; see docs/formats.md.

nlohmann::ordered_json revision_to_json(const Revision& r);
/// Throws SchemaError for missing or malformed fields.
Revision revision_from_json(const nlohmann::json& j);
nlohmann::ordered_json audit_to_json(const AuditRecord& a);
AuditRecord audit_from_json(const nlohmann::json& j);
nlohmann::ordered_json policy_to_json(const RevisionPolicy& p);
/// Throws ValidationError for unknown keys, negative bounds or bad sources.
RevisionPolicy policy_from_json(const nlohmann::json& j);

} // namespace ilog::schedule
