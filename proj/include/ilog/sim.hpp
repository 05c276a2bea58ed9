#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ilog/context.hpp"
#include "ilog/ilogcal.hpp"
#include "ilog/schedule.hpp"
#include "ilog/time.hpp"

// Participant simulation: question lifecycle events, sensor readings and
// ground-truth contexts.
namespace ilog::sim {

using namespace std::chrono_literals;

enum class EventKind { QuestionGenerated, QuestionDelivered, AnswerStarted, AnswerStored, Missed, SensorReading };
enum class QuestionKind { TimeDiary, Task };

std::string_view to_string(EventKind k);
std::optional<EventKind> parse_event_kind(std::string_view s);
std::string_view to_string(QuestionKind k);

/// One record of the event log: a question lifecycle event or a sensor reading.
struct Event {
  std::string participant;
  EventKind kind = EventKind::QuestionGenerated;
  Instant at{};
  schedule::SourceRef source;
  std::optional<std::uint64_t> seq_no;  // absent for on-change sensor readings
  std::optional<std::string> value;     // answer text or reading value
  std::optional<bool> correct;          // AnswerStored in simulation: matches ground truth
  QuestionKind diary = QuestionKind::Task;
  std::string sensor;  // readings only

  bool is_reading() const { return kind == EventKind::SensorReading; }
  bool operator==(const Event&) const = default;
};

using EventLog = std::vector<Event>;

/// Deterministic total order used for merged logs: (at, participant, kind, ...).
bool event_less(const Event& a, const Event& b);

struct OccurrenceKey {
  std::string participant;
  schedule::SourceRef source;
  std::uint64_t seq_no = 0;
  auto operator<=>(const OccurrenceKey&) const = default;
};

/// Key of a question lifecycle event; nullopt for readings.
std::optional<OccurrenceKey> key_of(const Event& e);

struct TimingMetrics {
  std::optional<Instant> generated, delivered, started, stored, missed;
  std::optional<Duration> reaction;    // started - delivered
  std::optional<Duration> completion;  // stored - started
  std::optional<Duration> delay;       // stored - generated
};

/// Throws LifecycleError when the occurrence has no Delivered event or its
/// events are out of lifecycle order.
TimingMetrics derive_timing(const EventLog& log, const OccurrenceKey& key);
/// Every question occurrence in the log, in key order. Occurrences that were
/// never delivered keep empty timing fields. Ordering violations throw when
/// strict; otherwise the offending occurrences are left out (logs with faults
/// injected can lose half of a lifecycle).
std::map<OccurrenceKey, TimingMetrics> derive_timings(const EventLog& log, bool strict = true);

/// Checks lifecycle order per occurrence: kinds in Generated, Delivered,
/// AnswerStarted, AnswerStored order with non-decreasing times, no kind twice,
/// and never both Missed and AnswerStored. Throws LifecycleError naming the
/// first offending occurrence.
void check_lifecycle(const EventLog& log);

// Behaviour model.

class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform();  // [0, 1)
  double normal();
  std::uint64_t below(std::uint64_t n);
  std::uint64_t next() { return engine_(); }

private:
  std::mt19937_64 engine_;
};

/// Log-normal over seconds: exp(mu + sigma * Z). sigma = 0 is a point mass.
struct LogNormal {
  double mu = 0;
  double sigma = 1;
  Duration sample(Rng& rng) const;
  bool operator==(const LogNormal&) const = default;
};

struct ResponseCell {
  double p_answer = 0.9;
  LogNormal reaction{6.5, 1.0};
  LogNormal completion{3.7, 0.4};
  double p_correct = 0.8;
  bool operator==(const ResponseCell&) const = default;
};

/// Probability that an answer is stored within `horizon` of delivery.
double high_quality_probability(const ResponseCell& cell, Duration horizon = 30min);

/// A cell whose reaction median is tuned so that high_quality_probability()
/// equals p_high. Throws ValidationError when p_high > p_answer.
ResponseCell calibrated_cell(double p_high, double p_correct, double p_answer = 0.9, double reaction_sigma = 1.0);

/// Cell override for the matching (place, company, weekday, day period); unset
/// fields match anything.
struct CellRule {
  std::optional<std::string> location;
  std::optional<std::string> companion;
  std::optional<int> weekday;
  std::optional<DayPeriod> period;
  ResponseCell cell;
  bool operator==(const CellRule&) const = default;
};

struct BehaviorModel {
  std::uint64_t seed = 0;
  Duration delivery_latency = 5s;
  double p_delivery_failure = 0;
  ResponseCell fallback;
  std::vector<CellRule> rules;  // first match wins

  const ResponseCell& resolve(std::string_view location, std::string_view companion, int weekday,
                              DayPeriod period) const;
  bool operator==(const BehaviorModel&) const = default;
};

/// Throws ValidationError for probabilities outside [0, 1] or negative sigmas.
void check_model(const BehaviorModel& m);

/// Location cells from the reference study: the share of high-quality answers
/// per place (e.g. 0.2887 for a restaurant or pub) is used both as the
/// within-30-minutes rate and as the correctness rate.
BehaviorModel location_model(std::uint64_t seed);
/// The reference per-location high-quality rates, in table order.
const std::vector<std::pair<std::string, double>>& location_rates();

nlohmann::ordered_json model_to_json(const BehaviorModel& m);
/// Cells may give {"p_high", "p_correct"} instead of explicit distributions.
BehaviorModel model_from_json(const nlohmann::json& j);

// Ground truth.

struct GroundTruthOptions {
  std::vector<std::string> locations;  // empty: the nine reference places
  Duration mean_duration = 90min;
  Duration min_duration = 20min;
};

/// Contiguous minute-aligned contexts covering [start, end), with activities
/// that are plausible for the place.
context::LifeSequence generate_ground_truth(const std::string& person, Instant start, Instant end,
                                            std::uint64_t seed, const GroundTruthOptions& options = {});

/// Label a question of this category has in the context; nullopt when the
/// context does not carry that dimension. WO with nobody around is "Alone".
std::optional<std::string> truth_label(const context::SituationalContext& ctx, cal::Category category);

// Simulation.

struct SimulationInput {
  const cal::ExperimentPlan* plan = nullptr;
  const std::map<std::string, schedule::Timeline>* timelines = nullptr;
  std::vector<context::ParticipantProfile> profiles;
  std::map<std::string, context::LifeSequence> ground_truth;
  BehaviorModel model;
};

/// Merged log for every profile, ordered by event_less. Participants are
/// simulated in parallel when OpenMP is available; each has its own random
/// stream, so the result does not depend on scheduling. Throws CoverageError
/// when a participant's ground truth never carries a category a question asks.
EventLog run_simulation(const SimulationInput& input);
/// Single-threaded reference; produces the same log.
EventLog run_simulation_serial(const SimulationInput& input);

/// Events of one participant, sorted.
EventLog simulate_participant(const SimulationInput& input, const context::ParticipantProfile& profile);

// Faults.

struct BlackoutDay {
  Instant day;  // any instant of the UTC day
};
struct SensorDropout {
  std::string sensor;
  Instant from;
  Instant to;
};
/// Moves every answer the participant stored in [from, to) into one minute.
struct AnswerBurst {
  std::string participant;
  Instant from;
  Instant to;
};
using Fault = std::variant<BlackoutDay, SensorDropout, AnswerBurst>;

EventLog inject_fault(EventLog log, const Fault& fault);

// Serialization: one JSON object per line after a schema header.

inline constexpr int kEventSchemaVersion = 1;

nlohmann::ordered_json event_to_json(const Event& e);
/// Throws SchemaError on missing or malformed fields.
Event event_from_json(const nlohmann::json& j);

std::string write_event_log(const EventLog& log);
/// Throws SchemaError for a missing or unsupported header or a bad record.
EventLog read_event_log(std::string_view text);

std::string log_digest(const EventLog& log);

} // namespace ilog::sim
