#include "ilog/context.hpp"

#include <algorithm>
#include <sstream>

#include <json.hpp>

#include "ilog/errors.hpp"

namespace ilog::context {

using ojson = nlohmann::ordered_json;

void check_context(const SituationalContext& ctx) {
  if (ctx.start >= ctx.end)
    throw OrderError("context " + ctx.id + " starts at or after its end (" +
                     format_iso(ctx.start) + " >= " + format_iso(ctx.end) + ")");
  if (ctx.closed && ctx.wa.empty())
    throw ValidationError("context/" + ctx.id, "closed context has no activity");
  for (const auto& span : ctx.activity_spans) {
    if (span.start >= span.end || span.start < ctx.start || span.end > ctx.end)
      throw ValidationError("context/" + ctx.id, "activity span '" + span.label +
                                                     "' lies outside the context interval");
  }
}

LifeSequence append_context(LifeSequence seq, SituationalContext ctx) {
  check_context(ctx);
  if (!seq.contexts.empty() && ctx.start < seq.contexts.back().end)
    throw OverlapError("context " + ctx.id + " starts at " + format_iso(ctx.start) +
                       " before the previous context ends at " +
                       format_iso(seq.contexts.back().end));
  seq.contexts.push_back(std::move(ctx));
  return seq;
}

const SituationalContext* find_context(const LifeSequence& seq, Instant t) {
  // First context whose end is after t; it contains t iff it has started.
  auto it = std::upper_bound(seq.contexts.begin(), seq.contexts.end(), t,
                             [](Instant v, const SituationalContext& c) { return v < c.end; });
  if (it == seq.contexts.end() || !it->contains(t)) return nullptr;
  return &*it;
}

std::optional<SituationalContext> context_at(const LifeSequence& seq, Instant t) {
  if (const auto* c = find_context(seq, t)) return *c;
  return std::nullopt;
}

void check_profile(const ParticipantProfile& p, const ProfileVocabulary& vocab) {
  auto check = [&](const std::set<std::string>& allowed, const std::string& v, const char* field) {
    if (!allowed.empty() && !allowed.contains(v))
      throw ValidationError("profile/" + p.id + "/" + field, "'" + v + "' is not in the vocabulary");
  };
  check(vocab.genders, p.gender, "gender");
  check(vocab.degrees, p.degree, "degree");
  check(vocab.departments, p.department, "department");
}

Cohort cohort_from_json(const nlohmann::json& j) {
  Cohort c;
  try {
    const nlohmann::json* list = &j;
    if (j.is_object()) {
      for (const auto& [key, v] : j.items())
        if (key != "participants" && key != "vocabulary") throw ValidationError("cohort." + key, "unknown field");
      if (!j.contains("participants")) throw ValidationError("cohort", "missing participants");
      list = &j.at("participants");
      if (j.contains("vocabulary")) {
        const auto& v = j.at("vocabulary");
        for (const auto& [key, values] : v.items()) {
          auto set = values.get<std::set<std::string>>();
          if (key == "genders") c.vocabulary.genders = set;
          else if (key == "degrees") c.vocabulary.degrees = set;
          else if (key == "departments") c.vocabulary.departments = set;
          else throw ValidationError("cohort.vocabulary." + key, "unknown field");
        }
      }
    }
    if (!list->is_array()) throw ValidationError("cohort", "participants must be an array");
    std::set<std::string> seen;
    for (const auto& item : *list) {
      ParticipantProfile p;
      for (const auto& [key, v] : item.items()) {
        if (key == "id") p.id = v.get<std::string>();
        else if (key == "gender") p.gender = v.get<std::string>();
        else if (key == "degree") p.degree = v.get<std::string>();
        else if (key == "department") p.department = v.get<std::string>();
        else if (key == "timezone") p.timezone = v.get<std::string>();
        else throw ValidationError("cohort.participants." + key, "unknown field");
      }
      if (p.id.empty()) throw ValidationError("cohort.participants", "profile without an id");
      if (p.id.find_first_of("/?#& ") != std::string::npos)
        throw ValidationError("profile/" + p.id, "id may not contain '/', '?', '#', '&' or spaces");
      if (!seen.insert(p.id).second) throw DuplicateIdError("profile/" + p.id, "participant listed twice");
      check_profile(p, c.vocabulary);
      c.profiles.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("cohort", e.what());
  }
  return c;
}

nlohmann::ordered_json cohort_to_json(const Cohort& c) {
  ojson list = ojson::array();
  for (const auto& p : c.profiles)
    list.push_back({{"id", p.id}, {"gender", p.gender}, {"degree", p.degree}, {"department", p.department},
                    {"timezone", p.timezone}});
  return {{"participants", std::move(list)},
          {"vocabulary",
           {{"genders", c.vocabulary.genders}, {"degrees", c.vocabulary.degrees}, {"departments", c.vocabulary.departments}}}};
}

ContextGraph context_to_graph(const SituationalContext& ctx, const std::vector<Entity>& entities,
                              const std::vector<Relation>& relations, const std::string& person) {
  ContextGraph g;
  GraphNode me{"Person", {{"Name", person}}};
  if (ctx.wi) me.attributes["Mood"] = *ctx.wi;
  g.nodes.emplace(person, std::move(me));
  for (const auto& e : entities) {
    auto attrs = e.attributes;
    attrs.emplace("Name", e.name);
    if (!g.nodes.emplace(e.name, GraphNode{e.kind, std::move(attrs)}).second)
      throw ValidationError("graph/" + ctx.id, "entity '" + e.name + "' declared twice");
  }
  for (const auto& r : relations) {
    for (const auto* end : {&r.source, &r.target})
      if (!g.nodes.contains(*end))
        throw DanglingEdgeError("relation " + r.label + " names undeclared entity '" + *end + "'");
    g.edges.emplace(r.source, r.label, r.target);
  }
  return g;
}

namespace {

ojson opt(const std::optional<std::string>& v) { return v ? ojson(*v) : ojson(nullptr); }

std::optional<std::string> opt_str(const ojson& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

Instant iso_field(const ojson& j, const char* key) {
  auto t = parse_iso(j.at(key).get<std::string>());
  if (!t) throw SchemaError(std::string("bad timestamp in field ") + key);
  return *t;
}

template <class Fn>
void for_each_record(const std::string& text, Fn&& fn) {
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ojson j;
    try {
      j = ojson::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("line " + std::to_string(n) + ": " + e.what());
    }
    fn(j);
  }
}

} // namespace

std::string serialize_life_sequence(const LifeSequence& seq) {
  std::string out;
  out += ojson{{"record", "life_sequence"}, {"person", seq.person}, {"purpose", seq.purpose}}.dump();
  out += '\n';
  for (const auto& c : seq.contexts) {
    ojson spans = ojson::array();
    for (const auto& s : c.activity_spans)
      spans.push_back({{"label", s.label}, {"start", format_iso(s.start)}, {"end", format_iso(s.end)}});
    ojson j{{"record", "context"}, {"id", c.id},          {"start", format_iso(c.start)},
            {"end", format_iso(c.end)}, {"we", opt(c.we)}, {"wa", c.wa},
            {"wi", opt(c.wi)},          {"wo", c.wo},      {"wu", c.wu},
            {"spans", spans},           {"closed", c.closed}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

LifeSequence parse_life_sequence(const std::string& text) {
  LifeSequence seq;
  bool header = false;
  for_each_record(text, [&](const ojson& j) {
    auto kind = j.at("record").get<std::string>();
    if (kind == "life_sequence") {
      seq.person = j.at("person").get<std::string>();
      seq.purpose = j.value("purpose", "");
      header = true;
    } else if (kind == "context") {
      SituationalContext c;
      c.id = j.at("id").get<std::string>();
      c.start = iso_field(j, "start");
      c.end = iso_field(j, "end");
      c.we = opt_str(j, "we");
      c.wa = j.at("wa").get<std::vector<std::string>>();
      c.wi = opt_str(j, "wi");
      c.wo = j.at("wo").get<std::vector<std::string>>();
      c.wu = j.at("wu").get<std::vector<std::string>>();
      c.closed = j.value("closed", true);
      if (j.contains("spans"))
        for (const auto& s : j.at("spans"))
          c.activity_spans.push_back(
              {s.at("label").get<std::string>(), iso_field(s, "start"), iso_field(s, "end")});
      seq = append_context(std::move(seq), std::move(c));
    } else {
      throw SchemaError("unexpected record kind '" + kind + "' in life sequence");
    }
  });
  if (!header) throw SchemaError("life sequence header record missing");
  return seq;
}

std::string serialize_graph(const ContextGraph& g) {
  std::string out;
  for (const auto& [id, node] : g.nodes) {
    ojson attrs = ojson::object();
    for (const auto& [k, v] : node.attributes) attrs[k] = v;
    out += ojson{{"record", "node"}, {"id", id}, {"kind", node.kind}, {"attributes", attrs}}.dump();
    out += '\n';
  }
  for (const auto& [s, l, t] : g.edges) {
    out += ojson{{"record", "edge"}, {"source", s}, {"label", l}, {"target", t}}.dump();
    out += '\n';
  }
  return out;
}

ContextGraph parse_graph(const std::string& text) {
  ContextGraph g;
  for_each_record(text, [&](const ojson& j) {
    auto kind = j.at("record").get<std::string>();
    if (kind == "node") {
      GraphNode n{j.at("kind").get<std::string>(), {}};
      for (const auto& [k, v] : j.at("attributes").items()) n.attributes[k] = v.get<std::string>();
      if (!g.nodes.emplace(j.at("id").get<std::string>(), std::move(n)).second)
        throw SchemaError("duplicate node id " + j.at("id").get<std::string>());
    } else if (kind == "edge") {
      GraphEdge e{j.at("source").get<std::string>(), j.at("label").get<std::string>(),
                  j.at("target").get<std::string>()};
      if (!g.nodes.contains(std::get<0>(e)) || !g.nodes.contains(std::get<2>(e)))
        throw DanglingEdgeError("edge " + std::get<1>(e) + " references a missing node");
      g.edges.insert(std::move(e));
    } else {
      throw SchemaError("unexpected record kind '" + kind + "' in graph");
    }
  });
  return g;
}

} // namespace ilog::context
