#include "ilog/schedule.hpp"

#include <algorithm>
#include <charconv>

#include <json.hpp>

#include "ilog/errors.hpp"

namespace ilog::schedule {

std::vector<Instant> expand(const cal::RecurrenceRule& rule, Instant dtstart, Instant dtend, std::uint64_t cap) {
  if (rule.interval == 0 || rule.count == 0)
    throw ValidationError("rrule", "INTERVAL and COUNT must be at least 1");
  if (dtstart >= dtend) throw ValidationError("window", "DTSTART must precede DTEND");
  auto n = expansion_size(rule, dtstart, dtend);
  if (n > cap)
    throw OverflowError("expansion of " + cal::format_rrule(rule) + " yields " + std::to_string(n) +
                        " occurrences, above the cap of " + std::to_string(cap));
  std::vector<Instant> out;
  out.reserve(n);
  if (auto unit = cal::unit_length(rule.frequency)) {
    // n occurrences fit before dtend, so none of these additions can overflow.
    Duration step = *unit * std::int64_t(rule.interval);
    Instant t = dtstart;
    for (std::uint64_t k = 0; k < n; ++k, t += step) out.push_back(t);
  } else {
    for (std::uint64_t k = 0; k < n; ++k) out.push_back(*nth_instant(rule, dtstart, k));
  }
  return out;
}

std::string to_string(const SourceRef& s) {
  return std::to_string(s.calendar) + "/" + std::to_string(s.context) + "/" +
         (s.kind == SourceKind::Question ? "Q" : "S") + std::to_string(s.collection);
}

std::optional<SourceRef> parse_source(std::string_view s) {
  auto num = [](std::string_view v) -> std::optional<cal::Id> {
    cal::Id out = 0;
    auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || r.ec != std::errc{} || r.ptr != v.data() + v.size()) return std::nullopt;
    return out;
  };
  auto a = s.find('/');
  if (a == std::string_view::npos) return std::nullopt;
  auto b = s.find('/', a + 1);
  if (b == std::string_view::npos || b + 2 > s.size()) return std::nullopt;
  auto cal_id = num(s.substr(0, a));
  auto ctx_id = num(s.substr(a + 1, b - a - 1));
  char kind = s[b + 1];
  auto col = num(s.substr(b + 2));
  if (!cal_id || !ctx_id || !col || (kind != 'Q' && kind != 'S')) return std::nullopt;
  return SourceRef{*cal_id, *ctx_id, *col, kind == 'Q' ? SourceKind::Question : SourceKind::Sensor};
}

std::string_view to_string(Actor a) {
  switch (a) {
  case Actor::Researcher: return "researcher";
  case Actor::Participant: return "participant";
  case Actor::Platform: return "platform";
  }
  return "?";
}

std::optional<Actor> parse_actor(std::string_view s) {
  if (s == "researcher") return Actor::Researcher;
  if (s == "participant") return Actor::Participant;
  if (s == "platform") return Actor::Platform;
  return std::nullopt;
}

const CollectionState* Timeline::collection(const SourceRef& s) const {
  for (const auto& c : collections)
    if (c.source == s) return &c;
  return nullptr;
}

namespace {

bool entry_less(const Entry& a, const Entry& b) {
  const auto& x = a.occurrence;
  const auto& y = b.occurrence;
  return std::tie(x.scheduled_at, x.source, x.seq_no) < std::tie(y.scheduled_at, y.source, y.seq_no);
}

// window_end = the next non-cancelled occurrence of the same collection, capped
// at the collection's DTEND.
// Windows that closed at or before `closed_by` belong to the past and keep
// their end.
void recompute_windows(Timeline& tl, std::optional<Instant> closed_by = std::nullopt) {
  std::map<SourceRef, Instant> next_active;
  for (const auto& c : tl.collections) next_active[c.source] = c.dtend;
  std::map<SourceRef, Instant> dtend = next_active;
  for (auto it = tl.entries.rbegin(); it != tl.entries.rend(); ++it) {
    auto& occ = it->occurrence;
    if (!closed_by || occ.window_end > *closed_by)
      occ.window_end = std::min(next_active[occ.source], dtend[occ.source]);
    if (!it->cancelled) next_active[occ.source] = occ.scheduled_at;
  }
}

void add_occurrences(Timeline& tl, const CollectionState& c, std::uint64_t first_seq, Instant from,
                     const cal::RecurrenceRule& rule, Instant anchor, std::uint64_t cap) {
  std::uint64_t seq = first_seq;
  for (Instant t : expand(rule, anchor, c.dtend, cap)) {
    if (t < from) continue;
    tl.entries.push_back({{c.source, seq++, t, t}, false, std::nullopt});
  }
}

int rank(Actor a) { return static_cast<int>(a); }

Duration abs(Duration d) { return d < Duration::zero() ? -d : d; }

// Step length for comparing cadences; calendar months count as 28 days, the
// shortest they can be.
Duration nominal_step(const cal::RecurrenceRule& r) {
  auto interval = std::int64_t(std::min<std::uint64_t>(r.interval, 1'000'000'000));
  if (auto u = cal::unit_length(r.frequency)) return *u * interval;
  return 28 * kDay * interval * (r.frequency == cal::Frequency::Yearly ? 12 : 1);
}

struct Selection {
  std::vector<std::size_t> future;
  std::size_t past = 0;
};

Selection select(const Timeline& tl, const Target& target, Instant issued_at) {
  Selection sel;
  for (std::size_t i = 0; i < tl.entries.size(); ++i) {
    const auto& occ = tl.entries[i].occurrence;
    bool match = std::visit(
        [&](const auto& t) {
          using T = std::decay_t<decltype(t)>;
          if constexpr (std::is_same_v<T, OccurrenceTarget>)
            return occ.source == t.source && occ.seq_no == t.seq_no;
          else if constexpr (std::is_same_v<T, CollectionTarget>)
            return occ.source == t.source;
          else
            return occ.scheduled_at >= t.from && occ.scheduled_at < t.to &&
                   (!t.kind || occ.source.kind == *t.kind);
        },
        target);
    if (!match) continue;
    if (occ.scheduled_at < issued_at)
      ++sel.past;
    else
      sel.future.push_back(i);
  }
  return sel;
}

std::string describe(const Target& target) {
  return std::visit(
      [](const auto& t) -> std::string {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, OccurrenceTarget>)
          return "occurrence " + to_string(t.source) + "#" + std::to_string(t.seq_no);
        else if constexpr (std::is_same_v<T, CollectionTarget>)
          return "collection " + to_string(t.source);
        else
          return "span [" + format_iso(t.from) + ", " + format_iso(t.to) + ")";
      },
      target);
}

class Applier {
public:
  Applier(Timeline& tl, const Revision& rev, const RevisionPolicy* policy)
      : tl_(tl), rev_(rev), policy_(policy && rev.actor != Actor::Researcher ? policy : nullptr) {}

  AuditRecord run() {
    if (!rev_.participant.empty() && rev_.participant != tl_.participant)
      throw ValidationError("revision", "revision for participant '" + rev_.participant +
                                            "' applied to the timeline of '" + tl_.participant + "'");
    if (rev_.participant.empty() && rev_.actor != Actor::Researcher)
      throw ValidationError("revision", std::string(to_string(rev_.actor)) +
                                            " revisions must name the participant they apply to");
    std::uint64_t affected = std::visit([this](const auto& c) { return apply(c); }, rev_.change);
    recompute_windows(tl_, rev_.issued_at);
    return {rev_, affected, note_};
  }

private:
  PolicyViolation violation(const std::string& limit, const std::string& detail) const {
    return PolicyViolation(std::string(to_string(rev_.actor)), limit, detail);
  }

  Selection selection(bool allow_empty = false) const {
    auto sel = select(tl_, rev_.target, rev_.issued_at);
    bool single = std::holds_alternative<OccurrenceTarget>(rev_.target);
    if ((single && sel.past > 0) || (sel.future.empty() && sel.past > 0))
      throw ImmutablePast(describe(rev_.target) + " is scheduled before the revision was issued at " +
                          format_iso(rev_.issued_at));
    if (sel.future.empty() && !allow_empty)
      throw ValidationError("revision", describe(rev_.target) + " matches no occurrence");
    return sel;
  }

  void check_frozen(const Selection& sel) const {
    if (!policy_) return;
    auto frozen = [&](const SourceRef& s) { return policy_->frozen_collections.contains(s); };
    if (const auto* ct = std::get_if<CollectionTarget>(&rev_.target); ct && frozen(ct->source))
      throw violation("frozen_collections", "collection " + to_string(ct->source) + " is frozen");
    for (auto i : sel.future)
      if (frozen(tl_.entries[i].occurrence.source))
        throw violation("frozen_collections",
                        "collection " + to_string(tl_.entries[i].occurrence.source) + " is frozen");
  }

  const CollectionState& target_collection() const {
    const auto* ct = std::get_if<CollectionTarget>(&rev_.target);
    if (!ct) throw ValidationError("revision", "this change needs a collection target");
    const auto* c = tl_.collection(ct->source);
    if (!c) throw ValidationError("revision", "unknown collection " + to_string(ct->source));
    return *c;
  }

  std::uint64_t apply(const Shift& s) {
    auto sel = selection();
    check_frozen(sel);
    if (policy_) {
      bool participant = rev_.actor == Actor::Participant;
      Duration bound = participant ? policy_->max_participant_shift
                                   : std::min(policy_->platform_shift_window, policy_->max_participant_shift);
      if (abs(s.delta) > bound)
        throw violation(participant ? "max_participant_shift" : "platform_shift_window",
                        "shift of " + std::to_string(s.delta.count() / 1000) + "s exceeds " +
                            std::to_string(bound.count() / 1000) + "s");
    }
    for (auto i : sel.future) {
      const auto& occ = tl_.entries[i].occurrence;
      Instant moved = occ.scheduled_at + s.delta;
      if (moved < rev_.issued_at)
        throw ImmutablePast("shift would move " + to_string(occ.source) + "#" + std::to_string(occ.seq_no) +
                            " before the revision time");
      const auto* c = tl_.collection(occ.source);
      if (c && (moved < c->dtstart || moved >= c->dtend))
        throw ValidationError("revision", "shift moves " + to_string(occ.source) + "#" + std::to_string(occ.seq_no) +
                                              " outside its collection window");
    }
    for (auto i : sel.future) tl_.entries[i].occurrence.scheduled_at += s.delta;
    std::sort(tl_.entries.begin(), tl_.entries.end(), entry_less);
    return sel.future.size();
  }

  std::uint64_t apply(const Cancel&) {
    auto sel = selection();
    check_frozen(sel);
    std::vector<std::size_t> todo;
    for (auto i : sel.future)
      if (!tl_.entries[i].cancelled) todo.push_back(i);
    if (policy_) {
      std::map<std::int64_t, int> per_day;
      for (const auto& e : tl_.entries)
        if (e.cancelled && e.cancelled_by == rev_.actor) ++per_day[day_index(e.occurrence.scheduled_at)];
      for (auto i : todo) {
        auto day = day_index(tl_.entries[i].occurrence.scheduled_at);
        if (++per_day[day] > policy_->max_participant_cancels_per_day)
          throw violation("max_participant_cancels_per_day",
                          "more than " + std::to_string(policy_->max_participant_cancels_per_day) +
                              " cancellations on " + format_date(tl_.entries[i].occurrence.scheduled_at));
      }
    }
    for (auto i : todo) {
      tl_.entries[i].cancelled = true;
      tl_.entries[i].cancelled_by = rev_.actor;
    }
    return todo.size();
  }

  std::uint64_t apply(const Reinstate&) {
    if (const auto* ct = std::get_if<CollectionTarget>(&rev_.target)) {
      auto* c = const_cast<CollectionState*>(tl_.collection(ct->source));
      if (c && !c->accepted) return reinstate_collection(*c);
    }
    auto sel = selection();
    check_frozen(sel);
    std::vector<std::size_t> todo;
    for (auto i : sel.future) {
      const auto& e = tl_.entries[i];
      if (!e.cancelled) continue;
      if (policy_ && e.cancelled_by && rank(*e.cancelled_by) < rank(rev_.actor))
        throw violation("hierarchy", std::string(to_string(rev_.actor)) + " cannot undo a cancellation by the " +
                                         std::string(to_string(*e.cancelled_by)));
      todo.push_back(i);
    }
    for (auto i : todo) {
      tl_.entries[i].cancelled = false;
      tl_.entries[i].cancelled_by.reset();
    }
    return todo.size();
  }

  std::uint64_t reinstate_collection(CollectionState& c) {
    if (policy_ && rev_.actor == Actor::Platform)
      throw violation("participant_acceptance", "only the researcher or the participant can accept collection " +
                                                    to_string(c.source));
    if (policy_ && policy_->frozen_collections.contains(c.source))
      throw violation("frozen_collections", "collection " + to_string(c.source) + " is frozen");
    if (rev_.issued_at >= c.dtend)
      throw ImmutablePast("collection " + to_string(c.source) + " ended before the revision was issued");
    c.accepted = true;
    auto before = tl_.entries.size();
    add_occurrences(tl_, c, 0, rev_.issued_at, c.rrule, c.dtstart, kDefaultExpansionCap);
    // seq_no keeps its meaning as the index in the original expansion
    std::uint64_t seq = 0;
    for (auto t : expand(c.rrule, c.dtstart, c.dtend)) {
      if (t >= rev_.issued_at) break;
      ++seq;
    }
    for (auto i = before; i < tl_.entries.size(); ++i) tl_.entries[i].occurrence.seq_no += seq;
    std::sort(tl_.entries.begin(), tl_.entries.end(), entry_less);
    note_ = "reinstated collection " + to_string(c.source) + " previously rejected by the participant";
    return tl_.entries.size() - before;
  }

  std::uint64_t apply(const FrequencyOverride& f) {
    const auto& target = target_collection();
    auto& c = const_cast<CollectionState&>(target);
    if (f.rule.interval == 0 || f.rule.count == 0)
      throw ValidationError("revision", "override rule needs INTERVAL and COUNT of at least 1");
    if (rev_.issued_at >= c.dtend)
      throw ImmutablePast("collection " + to_string(c.source) + " ended before the revision was issued");
    if (policy_) {
      if (policy_->frozen_collections.contains(c.source))
        throw violation("frozen_collections", "collection " + to_string(c.source) + " is frozen");
      if (rev_.actor == Actor::Participant)
        throw violation("frequency_override", "only the researcher or the platform can change a cadence");
      if (nominal_step(f.rule) < nominal_step(c.rrule))
        throw violation("cadence", "platform may not sample more often than the researcher's plan");
    }
    std::optional<Instant> anchor;
    std::uint64_t next_seq = 0;
    std::vector<Entry> kept;
    kept.reserve(tl_.entries.size());
    std::uint64_t removed = 0;
    for (auto& e : tl_.entries) {
      const auto& occ = e.occurrence;
      if (occ.source == c.source && occ.scheduled_at >= rev_.issued_at) {
        if (!anchor || occ.scheduled_at < *anchor) anchor = occ.scheduled_at;
        ++removed;
        continue;
      }
      if (occ.source == c.source) next_seq = std::max(next_seq, occ.seq_no + 1);
      kept.push_back(std::move(e));
    }
    tl_.entries = std::move(kept);
    c.rrule = f.rule;
    if (c.accepted) {
      Instant start = anchor.value_or(std::max(rev_.issued_at, c.dtstart));
      add_occurrences(tl_, c, next_seq, start, f.rule, start, kDefaultExpansionCap);
    }
    std::sort(tl_.entries.begin(), tl_.entries.end(), entry_less);
    note_ = "replaced " + std::to_string(removed) + " future occurrences";
    return removed;
  }

  Timeline& tl_;
  const Revision& rev_;
  const RevisionPolicy* policy_;
  std::string note_;
};

} // namespace

Timeline compile_one(const cal::ExperimentPlan& plan, const std::string& participant, std::uint64_t cap) {
  Timeline tl;
  tl.participant = participant;
  auto add = [&](SourceRef src, Instant dtstart, Instant dtend, const cal::RecurrenceRule& rule, bool accepted,
                 const std::string& path) {
    CollectionState c{src, dtstart, dtend, rule, accepted};
    tl.collections.push_back(c);
    if (!accepted) return;
    try {
      add_occurrences(tl, c, 0, dtstart, rule, dtstart, cap);
    } catch (const OverflowError& e) {
      throw OverflowError(path + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path, e.what());
    }
  };
  for (const auto& cal : plan.calendars)
    for (const auto& ctx : cal.contexts) {
      std::string base = "calendar[" + std::to_string(cal.id) + "]/context[" + std::to_string(ctx.id) + "]";
      for (const auto& q : ctx.questions)
        add({cal.id, ctx.id, q.cid, SourceKind::Question}, q.dtstart, q.dtend, q.rrule, q.accepted,
            base + "/question[" + std::to_string(q.cid) + "]");
      for (const auto& s : ctx.sensors)
        add({cal.id, ctx.id, s.sid, SourceKind::Sensor}, s.dtstart, s.dtend, s.rrule, true,
            base + "/sensor[" + std::to_string(s.sid) + "]");
    }
  std::sort(tl.entries.begin(), tl.entries.end(), entry_less);
  recompute_windows(tl);
  return tl;
}

std::map<std::string, Timeline> compile(const cal::ExperimentPlan& plan,
                                        const std::vector<context::ParticipantProfile>& participants,
                                        std::uint64_t cap) {
  std::map<std::string, Timeline> out;
  if (participants.empty()) return out;
  // Scheduling is per plan; every participant starts from the same expansion.
  auto base = compile_one(plan, participants.front().id, cap);
  for (const auto& p : participants) {
    auto tl = base;
    tl.participant = p.id;
    out.emplace(p.id, std::move(tl));
  }
  return out;
}

Timeline apply_revision(Timeline timeline, const Revision& rev, const RevisionPolicy& policy) {
  auto record = Applier(timeline, rev, &policy).run();
  timeline.audit.push_back(std::move(record));
  return timeline;
}

Timeline replay(Timeline compiled, const std::vector<AuditRecord>& audit) {
  compiled.audit.clear();
  for (const auto& rec : audit) {
    auto again = Applier(compiled, rec.revision, nullptr).run();
    compiled.audit.push_back(std::move(again));
  }
  return compiled;
}

std::optional<Occurrence> next_due(const Timeline& timeline, Instant now) {
  auto it = std::lower_bound(timeline.entries.begin(), timeline.entries.end(), now,
                             [](const Entry& e, Instant t) { return e.occurrence.scheduled_at < t; });
  for (; it != timeline.entries.end(); ++it)
    if (!it->cancelled) return it->occurrence;
  return std::nullopt;
}

std::vector<Occurrence> active(const Timeline& timeline, std::optional<SourceKind> kind) {
  std::vector<Occurrence> out;
  for (const auto& e : timeline.entries)
    if (!e.cancelled && (!kind || e.occurrence.source.kind == *kind)) out.push_back(e.occurrence);
  return out;
}

std::string export_records(const Timeline& timeline) {
  std::string out;
  for (const auto& e : timeline.entries) {
    const auto& o = e.occurrence;
    nlohmann::ordered_json j{
        {"participant", timeline.participant},
        {"source", to_string(o.source)},
        {"seq", o.seq_no},
        {"scheduled_at", format_iso(o.scheduled_at)},
        {"window_end", format_iso(o.window_end)},
        {"cancelled", e.cancelled},
    };
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string export_vevents(const Timeline& timeline, const cal::ExperimentPlan& plan) {
  std::map<SourceRef, std::string> summaries;
  for (const auto& c : plan.calendars)
    for (const auto& ctx : c.contexts) {
      for (const auto& q : ctx.questions)
        summaries[{c.id, ctx.id, q.cid, SourceKind::Question}] = q.question.content;
      for (const auto& s : ctx.sensors) summaries[{c.id, ctx.id, s.sid, SourceKind::Sensor}] = s.sensor.name;
    }
  std::string out;
  auto line = [&](std::string_view name, std::string_view value) {
    out += cal::fold_line(std::string(name) + ":" + std::string(value));
    out += "\r\n";
  };
  line("BEGIN", "VCALENDAR");
  line("VERSION", "2.0");
  line("PRODID", "-//ilog//timeline 1.0//EN");
  for (const auto& e : timeline.entries) {
    const auto& o = e.occurrence;
    line("BEGIN", "VEVENT");
    line("UID", timeline.participant + "-" + to_string(o.source) + "-" + std::to_string(o.seq_no) + "@ilog");
    line("DTSTAMP", format_ical(o.scheduled_at));
    line("DTSTART", format_ical(o.scheduled_at));
    line("DTEND", format_ical(o.window_end));
    line("SUMMARY", cal::escape_text(summaries[o.source]));
    line("STATUS", e.cancelled ? "CANCELLED" : "CONFIRMED");
    line("END", "VEVENT");
  }
  line("END", "VCALENDAR");
  return out;
}

// JSON ----------------------------------------------------------------------------

namespace {

using ojson = nlohmann::ordered_json;

std::string kind_name(SourceKind k) { return k == SourceKind::Question ? "question" : "sensor"; }

std::optional<SourceKind> parse_kind(std::string_view s) {
  if (s == "question") return SourceKind::Question;
  if (s == "sensor") return SourceKind::Sensor;
  return std::nullopt;
}

ojson instant_or_null(Instant t, Instant open) { return t == open ? ojson(nullptr) : ojson(format_iso(t)); }

} // namespace

nlohmann::ordered_json revision_to_json(const Revision& r) {
  ojson target = std::visit(
      [](const auto& t) -> ojson {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, OccurrenceTarget>)
          return {{"type", "occurrence"}, {"source", to_string(t.source)}, {"seq", t.seq_no}};
        else if constexpr (std::is_same_v<T, CollectionTarget>)
          return {{"type", "collection"}, {"source", to_string(t.source)}};
        else
          return {{"type", "span"},
                  {"from", instant_or_null(t.from, Instant::min())},
                  {"to", instant_or_null(t.to, Instant::max())},
                  {"kind", t.kind ? ojson(kind_name(*t.kind)) : ojson(nullptr)}};
      },
      r.target);
  ojson change = std::visit(
      [](const auto& c) -> ojson {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, Shift>) return {{"type", "shift"}, {"delta_ms", c.delta.count()}};
        else if constexpr (std::is_same_v<T, Cancel>) return {{"type", "cancel"}};
        else if constexpr (std::is_same_v<T, FrequencyOverride>)
          return {{"type", "frequency_override"}, {"rrule", cal::format_rrule(c.rule)}};
        else return {{"type", "reinstate"}};
      },
      r.change);
  return {{"actor", to_string(r.actor)},
          {"participant", r.participant},
          {"target", std::move(target)},
          {"change", std::move(change)},
          {"issued_at", format_iso(r.issued_at)}};
}

Revision revision_from_json(const nlohmann::json& j) {
  auto fail = [](const std::string& field, const std::string& why) -> SchemaError {
    return SchemaError("revision." + field + ": " + why);
  };
  try {
    if (!j.is_object()) throw fail("", "expected an object");
    Revision r;
    auto actor = parse_actor(j.at("actor").get<std::string>());
    if (!actor) throw fail("actor", "expected researcher, participant or platform");
    r.actor = *actor;
    r.participant = j.value("participant", "");
    auto issued = parse_iso(j.at("issued_at").get<std::string>());
    if (!issued) throw fail("issued_at", "not an ISO-8601 UTC instant");
    r.issued_at = *issued;

    auto source = [&](const nlohmann::json& t) {
      auto s = parse_source(t.at("source").get<std::string>());
      if (!s) throw fail("target.source", "expected calendar/context/Qn or Sn");
      return *s;
    };
    auto instant = [&](const nlohmann::json& v, Instant open, const char* field) {
      if (v.is_null()) return open;
      auto t = parse_iso(v.get<std::string>());
      if (!t) throw fail(std::string("target.") + field, "not an ISO-8601 UTC instant");
      return *t;
    };
    const auto& t = j.at("target");
    auto ttype = t.at("type").get<std::string>();
    if (ttype == "occurrence") r.target = OccurrenceTarget{source(t), t.at("seq").get<std::uint64_t>()};
    else if (ttype == "collection") r.target = CollectionTarget{source(t)};
    else if (ttype == "span") {
      SpanTarget span{instant(t.value("from", nlohmann::json()), Instant::min(), "from"),
                      instant(t.value("to", nlohmann::json()), Instant::max(), "to"), std::nullopt};
      if (t.contains("kind") && !t.at("kind").is_null()) {
        span.kind = parse_kind(t.at("kind").get<std::string>());
        if (!span.kind) throw fail("target.kind", "expected question or sensor");
      }
      r.target = span;
    } else throw fail("target.type", "expected occurrence, collection or span");

    const auto& c = j.at("change");
    auto ctype = c.at("type").get<std::string>();
    if (ctype == "shift") r.change = Shift{Duration{c.at("delta_ms").get<std::int64_t>()}};
    else if (ctype == "cancel") r.change = Cancel{};
    else if (ctype == "reinstate") r.change = Reinstate{};
    else if (ctype == "frequency_override") {
      std::string why;
      auto rule = cal::parse_rrule(c.at("rrule").get<std::string>(), &why);
      if (!rule) throw fail("change.rrule", why);
      r.change = FrequencyOverride{*rule};
    } else throw fail("change.type", "expected shift, cancel, frequency_override or reinstate");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("revision: ") + e.what());
  }
}

nlohmann::ordered_json audit_to_json(const AuditRecord& a) {
  return {{"revision", revision_to_json(a.revision)}, {"affected", a.affected}, {"note", a.note}};
}

AuditRecord audit_from_json(const nlohmann::json& j) {
  try {
    return {revision_from_json(j.at("revision")), j.at("affected").get<std::uint64_t>(), j.value("note", "")};
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("audit record: ") + e.what());
  }
}

nlohmann::ordered_json policy_to_json(const RevisionPolicy& p) {
  ojson frozen = ojson::array();
  for (const auto& s : p.frozen_collections) frozen.push_back(to_string(s));
  return {{"max_participant_shift_ms", p.max_participant_shift.count()},
          {"max_participant_cancels_per_day", p.max_participant_cancels_per_day},
          {"platform_shift_window_ms", p.platform_shift_window.count()},
          {"frozen_collections", std::move(frozen)}};
}

RevisionPolicy policy_from_json(const nlohmann::json& j) {
  RevisionPolicy p;
  try {
    if (!j.is_object()) throw ValidationError("policy", "expected a JSON object");
    for (const auto& [key, v] : j.items()) {
      if (key == "max_participant_shift_ms") p.max_participant_shift = Duration{v.get<std::int64_t>()};
      else if (key == "max_participant_cancels_per_day") p.max_participant_cancels_per_day = v.get<int>();
      else if (key == "platform_shift_window_ms") p.platform_shift_window = Duration{v.get<std::int64_t>()};
      else if (key == "frozen_collections") {
        for (const auto& s : v) {
          auto src = parse_source(s.get<std::string>());
          if (!src) throw ValidationError("policy.frozen_collections", "bad source '" + s.get<std::string>() + "'");
          p.frozen_collections.insert(*src);
        }
      } else throw ValidationError("policy." + key, "unknown field");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("policy", e.what());
  }
  if (p.max_participant_shift < Duration::zero() || p.platform_shift_window < Duration::zero() ||
      p.max_participant_cancels_per_day < 0)
    throw ValidationError("policy", "bounds must not be negative");
  return p;
}

} // namespace ilog::schedule
