#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "ilog/time.hpp"

namespace ilog::context {

/// Optional sub-interval of one activity inside a context, for activities done
/// in sequence rather than in parallel.
struct ActivitySpan {
  std::string label;
  Instant start;
  Instant end;
  bool operator==(const ActivitySpan&) const = default;
};

/// Five-dimension situational context over the half-open interval [start, end).
struct SituationalContext {
  std::string id;
  Instant start;
  Instant end;
  std::optional<std::string> we;  // where: exactly one place at a time
  std::vector<std::string> wa;    // what: one or more activities
  std::optional<std::string> wi;  // internal state / mood
  std::vector<std::string> wo;    // who with; empty means alone
  std::vector<std::string> wu;    // tools in use
  std::vector<ActivitySpan> activity_spans;
  bool closed = true;

  Duration duration() const { return end - start; }
  bool contains(Instant t) const { return start <= t && t < end; }
  bool operator==(const SituationalContext&) const = default;
};

/// Throws OrderError if start >= end, ValidationError if a closed context has
/// no activity or an activity span falls outside the context.
void check_context(const SituationalContext& ctx);

struct LifeSequence {
  std::string person;
  std::string purpose;
  std::vector<SituationalContext> contexts;
  bool operator==(const LifeSequence&) const = default;
};

/// Returns seq with ctx appended. Throws OverlapError when ctx starts before the
/// last context ends, OrderError when ctx.start >= ctx.end.
LifeSequence append_context(LifeSequence seq, SituationalContext ctx);

/// The unique context containing t, or nullopt in a gap. O(log n).
std::optional<SituationalContext> context_at(const LifeSequence& seq, Instant t);
const SituationalContext* find_context(const LifeSequence& seq, Instant t);

struct ParticipantProfile {
  std::string id;
  std::string gender;
  std::string degree;
  std::string department;
  std::string timezone = "UTC";
  bool operator==(const ParticipantProfile&) const = default;
};

/// Declared categorical vocabulary for profiles in one experiment.
struct ProfileVocabulary {
  std::set<std::string> genders, degrees, departments;
  bool operator==(const ProfileVocabulary&) const = default;
};

/// Throws ValidationError when a profile uses a value outside the vocabulary.
void check_profile(const ParticipantProfile& p, const ProfileVocabulary& vocab);

/// The enrolled participants of one experiment and their vocabulary.
struct Cohort {
  std::vector<ParticipantProfile> profiles;
  ProfileVocabulary vocabulary;
  bool operator==(const Cohort&) const = default;
};

/// {"participants": [{"id", "gender", "degree", "department", "timezone"}],
///  "vocabulary": {"genders": [...], "degrees": [...], "departments": [...]}}.
/// A bare array of profiles is accepted too. Throws ValidationError for
/// malformed input or vocabulary violations and DuplicateIdError for repeated ids.
Cohort cohort_from_json(const nlohmann::json& j);
nlohmann::ordered_json cohort_to_json(const Cohort& c);

// Knowledge-graph view of a single context.

struct GraphNode {
  std::string kind;
  std::map<std::string, std::string> attributes;
  bool operator==(const GraphNode&) const = default;
};

using GraphEdge = std::tuple<std::string, std::string, std::string>;  // source, label, target

struct ContextGraph {
  std::map<std::string, GraphNode> nodes;  // keyed by node id
  std::set<GraphEdge> edges;
  bool operator==(const ContextGraph&) const = default;
};

struct Entity {
  std::string kind;
  std::string name;
  std::map<std::string, std::string> attributes;
};

struct Relation {
  std::string source;
  std::string label;
  std::string target;
};

/// One node for the person (carrying wi as its Mood attribute), one per entity
/// and one edge per relation. Throws DanglingEdgeError for a relation naming an
/// undeclared entity, ValidationError for duplicate entity names.
ContextGraph context_to_graph(const SituationalContext& ctx, const std::vector<Entity>& entities,
                              const std::vector<Relation>& relations,
                              const std::string& person = "ME");

// Line-delimited records, one JSON object per line; see docs/formats.md.

std::string serialize_life_sequence(const LifeSequence& seq);
LifeSequence parse_life_sequence(const std::string& text);

std::string serialize_graph(const ContextGraph& g);
ContextGraph parse_graph(const std::string& text);

} // namespace ilog::context
