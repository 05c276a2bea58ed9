#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ilog/ilogcal.hpp"
#include "ilog/schedule.hpp"
#include "ilog/sim.hpp"
#include "ilog/time.hpp"

// Monitoring: participant ranking, compliance, data-quality flags and the
// dashboard summary. Every function here is a read-only fold over an event log;
// offsets are indices into that log.
namespace ilog::quality {

using namespace std::chrono_literals;

struct QualityParameters {
  std::int64_t max_unanswered = 10;
  Duration max_avg_completion_time = 2min;
  Duration max_avg_response_time = 30min;
  // Cut lines as fractions above each threshold: within (1 + lower) is good,
  // beyond (1 + upper) is poor.
  double band_lower = 0.0;
  double band_upper = 0.5;
  bool operator==(const QualityParameters&) const = default;
};

/// Throws ValidationError for non-positive thresholds or a bad band.
void check_params(const QualityParameters& p);
nlohmann::ordered_json params_to_json(const QualityParameters& p);
QualityParameters params_from_json(const nlohmann::json& j);

enum class Verdict { Good, Medium, Poor };
std::string_view to_string(Verdict v);

/// Per-participant answering behaviour over an evaluation window.
struct ParticipantMetrics {
  std::string participant;
  std::int64_t delivered = 0;
  std::int64_t answered = 0;
  std::int64_t unanswered = 0;  // Missed events
  Duration avg_reaction{};      // zero when nothing was answered
  Duration avg_completion{};
  bool operator==(const ParticipantMetrics&) const = default;
};

/// Metrics from lifecycle events whose occurrence was generated in [from, to).
/// Unset bounds are open.
std::map<std::string, ParticipantMetrics> participant_metrics(const sim::EventLog& log,
                                                              std::optional<Instant> from = std::nullopt,
                                                              std::optional<Instant> to = std::nullopt);

struct ParticipantRanking {
  std::string participant;
  Verdict verdict = Verdict::Good;
  std::int64_t unanswered_count = 0;
  Duration avg_reaction{};
  Duration avg_completion{};
  Instant as_of{};
  bool operator==(const ParticipantRanking&) const = default;
};

ParticipantRanking rank_participant(const ParticipantMetrics& m, const QualityParameters& p, Instant as_of);
/// Rankings for everyone in the log, as of its last event.
std::vector<ParticipantRanking> rank_all(const sim::EventLog& log, const QualityParameters& p);

/// Researcher-issued revision cancelling every future question and reading of a
/// participant. Never issued automatically.
schedule::Revision exclusion_revision(const std::string& participant, Instant now);

// Compliance.

struct HeatCell {
  std::int64_t delivered = 0;
  std::int64_t answered = 0;
  std::optional<double> rate() const {
    return delivered ? std::optional(double(answered) / double(delivered)) : std::nullopt;
  }
  bool operator==(const HeatCell&) const = default;
};

/// Participant x UTC day answer rates. An answer counts on the day its question
/// was delivered.
struct Heatmap {
  std::vector<std::string> participants;
  std::vector<Instant> days;                 // midnight of each day
  std::vector<std::vector<HeatCell>> cells;  // [participant][day]
  std::vector<bool> empty_day;               // no event of any kind from anyone
};

/// Days cover [from, to); participants are those in the log plus `enrolled`.
Heatmap compliance_heatmap(const sim::EventLog& log, Instant from, Instant to,
                           const std::vector<std::string>& enrolled = {});
/// Days as rows, participants as columns; absent cells are empty fields.
std::string heatmap_csv(const Heatmap& h);
nlohmann::ordered_json heatmap_to_json(const Heatmap& h);

struct Progress {
  Instant start{};
  Instant end{};
  std::int64_t days_total = 0;
  std::int64_t days_covered = 0;
  std::int64_t days_left = 0;
};

/// Experiment span from the plan's collection windows.
Progress experiment_progress(const cal::ExperimentPlan& plan, Instant as_of);

// Data-quality checks.

enum class FlagKind { MissingDay, ImplausibleAnswer, AnswerBurst, SensorGap, LocationMismatch };
std::string_view to_string(FlagKind k);

struct QualityFlag {
  std::string participant;  // "*" for flags about the whole cohort
  FlagKind kind = FlagKind::MissingDay;
  std::vector<std::size_t> evidence;  // log offsets, never empty
  Instant at{};
  std::string detail;
  bool operator==(const QualityFlag&) const = default;
};

struct CheckOptions {
  std::size_t burst_answers = 10;
  Duration burst_window = 60s;
  std::int64_t sensor_gap = 30;  // consecutive missed occurrences tolerated
  Duration location_tolerance = 10min;
  Duration pairing_window = 5min;  // answers to different questions describing the same moment
};

/// Timelines are optional: without them sensor gaps are found from holes in the
/// sequence numbers that did arrive, so leading and trailing gaps go unnoticed.
std::vector<QualityFlag> run_quality_checks(const sim::EventLog& log, const cal::ExperimentPlan& plan,
                                            const std::map<std::string, schedule::Timeline>* timelines = nullptr,
                                            const CheckOptions& options = {});

nlohmann::ordered_json flag_to_json(const QualityFlag& f);
std::string flags_ndjson(const std::vector<QualityFlag>& flags);
std::string flags_csv(const std::vector<QualityFlag>& flags);
nlohmann::ordered_json ranking_to_json(const ParticipantRanking& r);
std::string rankings_csv(const std::vector<ParticipantRanking>& rankings);

// Dashboard.

/// Who is looking: the researcher, or a participant bound to one id.
struct Viewer {
  bool researcher = true;
  std::string participant;  // the participant's own id
};

struct SummaryInput {
  const sim::EventLog* log = nullptr;
  const cal::ExperimentPlan* plan = nullptr;
  const std::map<std::string, schedule::Timeline>* timelines = nullptr;  // enables sensor rates
  QualityParameters params;
  std::vector<std::string> enrolled;
  std::optional<Instant> as_of;  // default: last event in the log
  std::uint64_t offset = 0;      // log offset the summary was computed at
};

/// Panels A-F for the requested slice (empty: the whole experiment). A
/// participant always gets their own slice; asking for anyone else's throws
/// AuthorizationError.
nlohmann::ordered_json dashboard_summary(const SummaryInput& in, const Viewer& viewer,
                                         const std::string& slice = {});

} // namespace ilog::quality
