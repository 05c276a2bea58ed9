#include "ilog/quality.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "ilog/catalog.hpp"
#include "ilog/errors.hpp"

namespace ilog::quality {

using sim::Event;
using sim::EventKind;
using sim::EventLog;
using sim::OccurrenceKey;
using schedule::SourceKind;
using schedule::SourceRef;

// Parameters ------------------------------------------------------------------

void check_params(const QualityParameters& p) {
  auto bad = [](const std::string& field, const std::string& why) { throw ValidationError("quality." + field, why); };
  if (p.max_unanswered <= 0) bad("max_unanswered", "must be positive");
  if (p.max_avg_completion_time <= Duration::zero()) bad("max_avg_completion_time", "must be positive");
  if (p.max_avg_response_time <= Duration::zero()) bad("max_avg_response_time", "must be positive");
  if (!(p.band_lower >= 0 && p.band_lower <= 1)) bad("medium_band", "lower cut must lie in [0, 1]");
  if (!(p.band_upper > 0 && p.band_upper <= 1)) bad("medium_band", "upper cut must lie in (0, 1]");
  if (!(p.band_lower < p.band_upper)) bad("medium_band", "lower cut must be below the upper cut");
}

nlohmann::ordered_json params_to_json(const QualityParameters& p) {
  return {{"max_unanswered", p.max_unanswered},
          {"max_avg_completion_time_ms", p.max_avg_completion_time.count()},
          {"max_avg_response_time_ms", p.max_avg_response_time.count()},
          {"medium_band", {p.band_lower, p.band_upper}}};
}

QualityParameters params_from_json(const nlohmann::json& j) {
  QualityParameters p;
  try {
    if (!j.is_object()) throw ValidationError("quality", "parameters must be a JSON object");
    for (const auto& [key, v] : j.items()) {
      if (key == "max_unanswered") p.max_unanswered = v.get<std::int64_t>();
      else if (key == "max_avg_completion_time_ms") p.max_avg_completion_time = Duration{v.get<std::int64_t>()};
      else if (key == "max_avg_response_time_ms") p.max_avg_response_time = Duration{v.get<std::int64_t>()};
      else if (key == "medium_band") {
        if (!v.is_array() || v.size() != 2) throw ValidationError("quality.medium_band", "expected [lower, upper]");
        p.band_lower = v[0].get<double>();
        p.band_upper = v[1].get<double>();
      } else {
        throw ValidationError("quality." + key, "unknown parameter");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("quality", e.what());
  }
  check_params(p);
  return p;
}

std::string_view to_string(Verdict v) {
  switch (v) {
  case Verdict::Good: return "Good";
  case Verdict::Medium: return "Medium";
  case Verdict::Poor: return "Poor";
  }
  return "?";
}

// Metrics and ranking -----------------------------------------------------------

namespace {

Duration mean(Duration sum, std::int64_t n) { return n ? Duration{sum.count() / n} : Duration::zero(); }

Instant last_event(const EventLog& log) {
  Instant t{};
  for (const auto& e : log) t = std::max(t, e.at);
  return t;
}

} // namespace

std::map<std::string, ParticipantMetrics> participant_metrics(const EventLog& log, std::optional<Instant> from,
                                                              std::optional<Instant> to) {
  struct Acc {
    ParticipantMetrics m;
    Duration reaction{}, completion{};
    std::int64_t reactions = 0, completions = 0;
  };
  std::map<std::string, Acc> acc;
  for (const auto& [key, t] : sim::derive_timings(log, false)) {
    auto anchor = t.generated ? t.generated : t.delivered;
    if (!anchor) anchor = t.missed;
    if (!anchor || (from && *anchor < *from) || (to && *anchor >= *to)) continue;
    auto& a = acc[key.participant];
    a.m.participant = key.participant;
    a.m.delivered += t.delivered.has_value();
    a.m.answered += t.stored.has_value();
    a.m.unanswered += t.missed.has_value();
    if (t.reaction) a.reaction += *t.reaction, ++a.reactions;
    if (t.completion) a.completion += *t.completion, ++a.completions;
  }
  std::map<std::string, ParticipantMetrics> out;
  for (auto& [pid, a] : acc) {
    a.m.avg_reaction = mean(a.reaction, a.reactions);
    a.m.avg_completion = mean(a.completion, a.completions);
    out.emplace(pid, a.m);
  }
  return out;
}

ParticipantRanking rank_participant(const ParticipantMetrics& m, const QualityParameters& p, Instant as_of) {
  auto ratio = [](double value, double threshold) { return value / threshold; };
  const double r[3] = {ratio(double(m.unanswered), double(p.max_unanswered)),
                       ratio(double(m.avg_reaction.count()), double(p.max_avg_response_time.count())),
                       ratio(double(m.avg_completion.count()), double(p.max_avg_completion_time.count()))};
  double worst = *std::max_element(std::begin(r), std::end(r));
  Verdict v = Verdict::Medium;
  if (worst <= 1 + p.band_lower) v = Verdict::Good;
  else if (worst > 1 + p.band_upper) v = Verdict::Poor;
  return {m.participant, v, m.unanswered, m.avg_reaction, m.avg_completion, as_of};
}

std::vector<ParticipantRanking> rank_all(const EventLog& log, const QualityParameters& p) {
  check_params(p);
  auto as_of = last_event(log);
  std::vector<ParticipantRanking> out;
  for (const auto& [pid, m] : participant_metrics(log, std::nullopt, as_of + Duration{1}))
    out.push_back(rank_participant(m, p, as_of));
  return out;
}

schedule::Revision exclusion_revision(const std::string& participant, Instant now) {
  return {schedule::Actor::Researcher, participant, schedule::SpanTarget{now, Instant::max(), std::nullopt},
          schedule::Cancel{}, now};
}

// Compliance ----------------------------------------------------------------------

Heatmap compliance_heatmap(const EventLog& log, Instant from, Instant to, const std::vector<std::string>& enrolled) {
  Heatmap h;
  std::set<std::string> people(enrolled.begin(), enrolled.end());
  for (const auto& e : log) people.insert(e.participant);
  h.participants.assign(people.begin(), people.end());
  for (Instant d = floor_day(from); d < to; d += kDay) h.days.push_back(d);
  h.cells.assign(h.participants.size(), std::vector<HeatCell>(h.days.size()));
  h.empty_day.assign(h.days.size(), true);
  if (h.days.empty()) return h;

  std::map<std::string, std::size_t> row;
  for (std::size_t i = 0; i < h.participants.size(); ++i) row[h.participants[i]] = i;
  auto column = [&](Instant t) -> std::optional<std::size_t> {
    if (t < h.days.front() || t >= to) return std::nullopt;
    return std::size_t((t - h.days.front()) / kDay);
  };

  std::set<OccurrenceKey> answered;
  for (const auto& e : log)
    if (e.kind == EventKind::AnswerStored)
      if (auto k = sim::key_of(e)) answered.insert(*k);
  for (const auto& e : log) {
    auto c = column(e.at);
    if (!c) continue;
    h.empty_day[*c] = false;
    if (e.kind != EventKind::QuestionDelivered) continue;
    auto& cell = h.cells[row[e.participant]][*c];
    ++cell.delivered;
    if (auto k = sim::key_of(e); k && answered.contains(*k)) ++cell.answered;
  }
  return h;
}

std::string heatmap_csv(const Heatmap& h) {
  std::ostringstream out;
  out << "day";
  for (const auto& p : h.participants) out << ',' << p;
  out << ",empty\n";
  for (std::size_t d = 0; d < h.days.size(); ++d) {
    out << format_date(h.days[d]);
    for (std::size_t p = 0; p < h.participants.size(); ++p) {
      out << ',';
      if (auto r = h.cells[p][d].rate()) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", *r);
        out << buf;
      }
    }
    out << ',' << (h.empty_day[d] ? "true" : "false") << '\n';
  }
  return out.str();
}

nlohmann::ordered_json heatmap_to_json(const Heatmap& h) {
  nlohmann::ordered_json days = nlohmann::ordered_json::array();
  for (auto d : h.days) days.push_back(format_date(d));
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (std::size_t p = 0; p < h.participants.size(); ++p) {
    nlohmann::ordered_json cells = nlohmann::ordered_json::array();
    for (const auto& c : h.cells[p]) {
      nlohmann::ordered_json cell{{"delivered", c.delivered}, {"answered", c.answered}};
      cell["rate"] = c.rate() ? nlohmann::ordered_json(*c.rate()) : nlohmann::ordered_json(nullptr);
      cells.push_back(std::move(cell));
    }
    rows.push_back({{"participant", h.participants[p]}, {"cells", std::move(cells)}});
  }
  nlohmann::ordered_json empty = nlohmann::ordered_json::array();
  for (std::size_t d = 0; d < h.days.size(); ++d)
    if (h.empty_day[d]) empty.push_back(format_date(h.days[d]));
  return {{"days", std::move(days)}, {"rows", std::move(rows)}, {"empty_days", std::move(empty)}};
}

Progress experiment_progress(const cal::ExperimentPlan& plan, Instant as_of) {
  Progress p;
  bool any = false;
  auto take = [&](Instant s, Instant e) {
    p.start = any ? std::min(p.start, s) : s;
    p.end = any ? std::max(p.end, e) : e;
    any = true;
  };
  for (const auto& c : plan.calendars)
    for (const auto& ctx : c.contexts) {
      for (const auto& q : ctx.questions) take(q.dtstart, q.dtend);
      for (const auto& s : ctx.sensors) take(s.dtstart, s.dtend);
    }
  if (!any) return p;
  auto first = floor_day(p.start);
  p.days_total = (p.end - first + kDay - Duration{1}) / kDay;
  p.days_covered = std::clamp<std::int64_t>((as_of - first) / kDay, 0, p.days_total);
  if (as_of < first) p.days_covered = 0;
  p.days_left = p.days_total - p.days_covered;
  return p;
}

// Checks ----------------------------------------------------------------------------

namespace {

struct PlanIndex {
  std::map<SourceRef, cal::Category> categories;
  std::map<SourceRef, std::string> sensor_names;
  std::map<SourceRef, const cal::SensorCollection*> sensors;
  std::map<SourceRef, const cal::QuestionCollection*> questions;

  explicit PlanIndex(const cal::ExperimentPlan& plan) {
    for (const auto& c : plan.calendars)
      for (const auto& ctx : c.contexts) {
        for (const auto& q : ctx.questions) {
          SourceRef s{c.id, ctx.id, q.cid, SourceKind::Question};
          categories[s] = q.question.category;
          questions[s] = &q;
        }
        for (const auto& sc : ctx.sensors) {
          SourceRef s{c.id, ctx.id, sc.sid, SourceKind::Sensor};
          sensor_names[s] = sc.sensor.name;
          sensors[s] = &sc;
        }
      }
  }
};

bool periodic(const cal::SensorCollection& sc) {
  if (const auto* spec = catalog::find_sensor(sc.sensor.name))
    return spec->cadence == catalog::Cadence::Periodic;
  for (const auto& ext : sc.extensions)
    if (ext.name == "X-ILOG-TRIGGER") return false;
  return true;
}

struct Answer {
  std::size_t offset;
  Instant delivered;
  std::string value;
};

void missing_days(const EventLog& log, std::vector<QualityFlag>& out) {
  if (log.empty()) return;
  std::map<std::int64_t, std::pair<std::size_t, std::size_t>> first_last;  // day -> first, last offset by time
  for (std::size_t i = 0; i < log.size(); ++i) {
    auto d = day_index(log[i].at);
    auto [it, fresh] = first_last.try_emplace(d, i, i);
    if (!fresh) {
      if (log[i].at < log[it->second.first].at) it->second.first = i;
      if (log[i].at >= log[it->second.second].at) it->second.second = i;
    }
  }
  for (auto it = first_last.begin(); std::next(it) != first_last.end(); ++it) {
    auto next = std::next(it);
    for (auto d = it->first + 1; d < next->first; ++d) {
      Instant day = Instant{} + d * kDay;
      out.push_back({"*", FlagKind::MissingDay, {it->second.second, next->second.first}, day,
                     "no event recorded on " + format_date(day)});
    }
  }
}

void answer_bursts(const std::string& pid, std::vector<std::pair<Instant, std::size_t>> stored,
                   const CheckOptions& opt, std::vector<QualityFlag>& out) {
  if (stored.size() < opt.burst_answers || opt.burst_answers == 0) return;
  std::sort(stored.begin(), stored.end());
  std::vector<bool> in_burst(stored.size(), false);
  std::size_t j = 0;
  for (std::size_t i = 0; i < stored.size(); ++i) {
    j = std::max(j, i);
    while (j + 1 < stored.size() && stored[j + 1].first - stored[i].first <= opt.burst_window) ++j;
    if (j - i + 1 >= opt.burst_answers)
      for (std::size_t k = i; k <= j; ++k) in_burst[k] = true;
  }
  for (std::size_t i = 0; i < stored.size();) {
    if (!in_burst[i]) {
      ++i;
      continue;
    }
    QualityFlag f{pid, FlagKind::AnswerBurst, {}, stored[i].first, {}};
    std::size_t k = i;
    while (k < stored.size() && in_burst[k] && (k == i || stored[k].first - stored[k - 1].first <= opt.burst_window))
      f.evidence.push_back(stored[k++].second);
    f.detail = std::to_string(f.evidence.size()) + " answers stored within " +
               std::to_string(std::chrono::duration_cast<std::chrono::seconds>(stored[k - 1].first - stored[i].first).count()) +
               " s";
    out.push_back(std::move(f));
    i = k;
  }
}

void sensor_gaps(const std::string& pid, const SourceRef& src, const std::string& name,
                 const std::map<std::uint64_t, std::size_t>& seen, const std::vector<std::uint64_t>* expected,
                 std::optional<std::size_t> fallback, const EventLog& log, const CheckOptions& opt,
                 std::vector<QualityFlag>& out) {
  auto flag = [&](std::uint64_t first_missing, std::uint64_t missing, std::optional<std::size_t> before,
                  std::optional<std::size_t> after, Instant at) {
    QualityFlag f{pid, FlagKind::SensorGap, {}, at, {}};
    if (before) f.evidence.push_back(*before);
    if (after) f.evidence.push_back(*after);
    if (f.evidence.empty() && fallback) f.evidence.push_back(*fallback);
    if (f.evidence.empty()) return;
    f.detail = name + " (" + to_string(src) + ") missed " + std::to_string(missing) +
               " consecutive readings from occurrence " + std::to_string(first_missing);
    out.push_back(std::move(f));
  };
  if (expected) {
    std::optional<std::size_t> before;
    std::uint64_t run = 0, run_start = 0;
    auto close = [&](std::optional<std::size_t> after) {
      if (run > std::uint64_t(opt.sensor_gap)) {
        Instant at = before ? log[*before].at : after ? log[*after].at : fallback ? log[*fallback].at : Instant{};
        flag(run_start, run, before, after, at);
      }
      run = 0;
    };
    for (auto seq : *expected) {
      auto it = seen.find(seq);
      if (it == seen.end()) {
        if (run++ == 0) run_start = seq;
        continue;
      }
      close(it->second);
      before = it->second;
    }
    close(std::nullopt);
    return;
  }
  for (auto it = seen.begin(); it != seen.end() && std::next(it) != seen.end(); ++it) {
    auto next = std::next(it);
    auto missing = next->first - it->first - 1;
    if (missing > std::uint64_t(opt.sensor_gap)) flag(it->first + 1, missing, it->second, next->second, log[it->second].at);
  }
}

} // namespace

std::string_view to_string(FlagKind k) {
  switch (k) {
  case FlagKind::MissingDay: return "MissingDay";
  case FlagKind::ImplausibleAnswer: return "ImplausibleAnswer";
  case FlagKind::AnswerBurst: return "AnswerBurst";
  case FlagKind::SensorGap: return "SensorGap";
  case FlagKind::LocationMismatch: return "LocationMismatch";
  }
  return "?";
}

std::vector<QualityFlag> run_quality_checks(const EventLog& log, const cal::ExperimentPlan& plan,
                                            const std::map<std::string, schedule::Timeline>* timelines,
                                            const CheckOptions& opt) {
  PlanIndex index(plan);
  std::vector<QualityFlag> out;
  missing_days(log, out);

  std::map<OccurrenceKey, Instant> delivered_at;
  for (const auto& e : log)
    if (e.kind == EventKind::QuestionDelivered)
      if (auto k = sim::key_of(e)) delivered_at[*k] = e.at;

  struct PerParticipant {
    std::vector<std::pair<Instant, std::size_t>> stored;
    std::vector<Answer> where, what;
    std::vector<std::pair<Instant, std::size_t>> locations;  // Location readings by time
    std::map<SourceRef, std::map<std::uint64_t, std::size_t>> readings;
    std::optional<std::size_t> first_event;
  };
  std::map<std::string, PerParticipant> people;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto& e = log[i];
    auto& p = people[e.participant];
    if (!p.first_event || e.at < log[*p.first_event].at) p.first_event = i;
    if (e.is_reading()) {
      if (e.sensor == "Location" && e.value) p.locations.emplace_back(e.at, i);
      if (e.seq_no) p.readings[e.source].emplace(*e.seq_no, i);
      continue;
    }
    if (e.kind != EventKind::AnswerStored) continue;
    p.stored.emplace_back(e.at, i);
    auto cat = index.categories.find(e.source);
    auto k = sim::key_of(e);
    if (cat == index.categories.end() || !k || !e.value) continue;
    auto d = delivered_at.find(*k);
    Answer a{i, d == delivered_at.end() ? e.at : d->second, *e.value};
    if (cat->second == cal::Category::WE) p.where.push_back(std::move(a));
    else if (cat->second == cal::Category::WA) p.what.push_back(std::move(a));
  }

  Instant as_of = last_event(log);
  for (auto& [pid, p] : people) {
    answer_bursts(pid, p.stored, opt, out);

    for (const auto& act : p.what)
      for (const auto& place : p.where) {
        auto gap = act.delivered - place.delivered;
        if (gap < -opt.pairing_window || gap > opt.pairing_window) continue;
        if (!catalog::implausible_pair(act.value, place.value)) continue;
        out.push_back({pid, FlagKind::ImplausibleAnswer, {std::min(act.offset, place.offset), std::max(act.offset, place.offset)},
                       std::max(act.delivered, place.delivered),
                       "\"" + act.value + "\" while at \"" + place.value + "\""});
      }

    std::sort(p.locations.begin(), p.locations.end());
    for (const auto& place : p.where) {
      auto cls = catalog::place_class(place.value);
      if (cls == "unknown") continue;
      auto lo = std::lower_bound(p.locations.begin(), p.locations.end(),
                                 std::pair{place.delivered - opt.location_tolerance, std::size_t{0}});
      std::vector<std::size_t> nearby;
      bool agrees = false;
      for (auto it = lo; it != p.locations.end() && it->first <= place.delivered + opt.location_tolerance; ++it) {
        nearby.push_back(it->second);
        const auto& v = *log[it->second].value;
        agrees = agrees || v.substr(0, v.find('|')) == cls;
      }
      if (nearby.empty() || agrees) continue;
      QualityFlag f{pid, FlagKind::LocationMismatch, {place.offset}, place.delivered,
                    "answered \"" + place.value + "\" but location readings show " +
                        log[nearby.front()].value->substr(0, log[nearby.front()].value->find('|'))};
      f.evidence.insert(f.evidence.end(), nearby.begin(), nearby.end());
      out.push_back(std::move(f));
    }

    const schedule::Timeline* tl = nullptr;
    if (timelines)
      if (auto it = timelines->find(pid); it != timelines->end()) tl = &it->second;
    std::set<SourceRef> sources;
    for (const auto& [src, seen] : p.readings) sources.insert(src);
    if (tl)
      for (const auto& c : tl->collections)
        if (c.source.kind == SourceKind::Sensor && c.accepted) sources.insert(c.source);
    for (const auto& src : sources) {
      auto sc = index.sensors.find(src);
      if (sc == index.sensors.end() || !periodic(*sc->second)) continue;
      static const std::map<std::uint64_t, std::size_t> kNone;
      auto rit = p.readings.find(src);
      const auto& seen = rit == p.readings.end() ? kNone : rit->second;
      std::vector<std::uint64_t> expected;
      if (tl)
        for (const auto& e : tl->entries)
          if (e.occurrence.source == src && !e.cancelled && e.occurrence.scheduled_at <= as_of)
            expected.push_back(e.occurrence.seq_no);
      sensor_gaps(pid, src, sc->second->sensor.name, seen, tl ? &expected : nullptr, p.first_event, log, opt, out);
    }
  }

  std::stable_sort(out.begin(), out.end(), [](const QualityFlag& a, const QualityFlag& b) {
    return std::tie(a.at, a.participant, a.kind, a.evidence) < std::tie(b.at, b.participant, b.kind, b.evidence);
  });
  return out;
}

// Exports ------------------------------------------------------------------------------

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

} // namespace

nlohmann::ordered_json flag_to_json(const QualityFlag& f) {
  return {{"participant", f.participant}, {"kind", to_string(f.kind)}, {"at", format_iso(f.at)},
          {"evidence", f.evidence},       {"detail", f.detail}};
}

std::string flags_ndjson(const std::vector<QualityFlag>& flags) {
  std::string out;
  for (const auto& f : flags) out += flag_to_json(f).dump() + "\n";
  return out;
}

std::string flags_csv(const std::vector<QualityFlag>& flags) {
  std::string out = "participant,kind,at,evidence,detail\n";
  for (const auto& f : flags) {
    std::string ev;
    for (auto o : f.evidence) ev += (ev.empty() ? "" : " ") + std::to_string(o);
    out += csv_field(f.participant) + "," + std::string(to_string(f.kind)) + "," + format_iso(f.at) + "," + ev + "," +
           csv_field(f.detail) + "\n";
  }
  return out;
}

nlohmann::ordered_json ranking_to_json(const ParticipantRanking& r) {
  return {{"participant", r.participant},
          {"verdict", to_string(r.verdict)},
          {"unanswered", r.unanswered_count},
          {"avg_reaction_ms", r.avg_reaction.count()},
          {"avg_completion_ms", r.avg_completion.count()},
          {"as_of", format_iso(r.as_of)}};
}

std::string rankings_csv(const std::vector<ParticipantRanking>& rankings) {
  std::string out = "participant,verdict,unanswered,avg_reaction_ms,avg_completion_ms,as_of\n";
  for (const auto& r : rankings)
    out += csv_field(r.participant) + "," + std::string(to_string(r.verdict)) + "," +
           std::to_string(r.unanswered_count) + "," + std::to_string(r.avg_reaction.count()) + "," +
           std::to_string(r.avg_completion.count()) + "," + format_iso(r.as_of) + "\n";
  return out;
}

// Dashboard ----------------------------------------------------------------------------

nlohmann::ordered_json dashboard_summary(const SummaryInput& in, const Viewer& viewer, const std::string& slice) {
  if (!in.log || !in.plan) throw ValidationError("summary", "log and plan are required");
  if (!viewer.researcher && (viewer.participant.empty() || (!slice.empty() && slice != viewer.participant)))
    throw AuthorizationError("participants may only view their own data");
  check_params(in.params);
  const auto& log = *in.log;
  const std::string scope = viewer.researcher ? slice : viewer.participant;  // empty: whole experiment
  auto in_scope = [&](const std::string& pid) { return scope.empty() || pid == scope; };
  Instant as_of = in.as_of ? *in.as_of : last_event(log);

  std::set<std::string> enrolled(in.enrolled.begin(), in.enrolled.end());
  for (const auto& e : log) enrolled.insert(e.participant);
  if (!viewer.researcher && !enrolled.contains(scope) && !(in.timelines && in.timelines->contains(scope)))
    throw AuthorizationError("participant " + scope + " is not part of this experiment");

  nlohmann::ordered_json panels;
  auto a = params_to_json(in.params);
  a["read_only"] = !viewer.researcher;
  panels["A"] = std::move(a);

  if (viewer.researcher) {
    std::set<std::string> live;
    for (const auto& e : log)
      if (e.at > as_of - kDay && e.at <= as_of) live.insert(e.participant);
    panels["B"] = {{"live_participants", live.size()}, {"enrolled", enrolled.size()}, {"window_ms", kDay.count()}};
  }

  auto progress = experiment_progress(*in.plan, as_of);
  panels["C"] = {{"start", format_iso(progress.start)},
                 {"end", format_iso(progress.end)},
                 {"days_total", progress.days_total},
                 {"days_covered", progress.days_covered},
                 {"days_left", progress.days_left}};

  PlanIndex index(*in.plan);
  std::map<SourceRef, std::pair<std::int64_t, std::int64_t>> per_question;  // generated, delivered
  std::int64_t generated = 0, delivered = 0;
  for (const auto& e : log) {
    if (!in_scope(e.participant) || e.at > as_of) continue;
    if (e.kind == EventKind::QuestionGenerated) ++generated, ++per_question[e.source].first;
    if (e.kind == EventKind::QuestionDelivered) ++delivered, ++per_question[e.source].second;
  }
  auto rate = [](std::int64_t num, std::int64_t den) {
    return den ? nlohmann::ordered_json(double(num) / double(den)) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json by_question = nlohmann::ordered_json::array();
  for (const auto& [src, counts] : per_question) {
    auto q = index.questions.find(src);
    by_question.push_back({{"source", to_string(src)},
                           {"question", q == index.questions.end() ? "" : q->second->question.content},
                           {"generated", counts.first},
                           {"delivered", counts.second},
                           {"delivery_rate", rate(counts.second, counts.first)}});
  }
  panels["D"] = {{"generated", generated},
                 {"delivered", delivered},
                 {"delivery_rate", rate(delivered, generated)},
                 {"questions", std::move(by_question)}};

  EventLog scoped;
  for (const auto& e : log)
    if (in_scope(e.participant) && e.at <= as_of) scoped.push_back(e);
  auto metrics = participant_metrics(scoped);
  ParticipantMetrics total;
  Duration reaction_sum{}, completion_sum{};
  std::int64_t reactions = 0, completions = 0;
  for (const auto& [key, t] : sim::derive_timings(scoped, false)) {
    total.delivered += t.delivered.has_value();
    total.answered += t.stored.has_value();
    total.unanswered += t.missed.has_value();
    if (t.reaction) reaction_sum += *t.reaction, ++reactions;
    if (t.completion) completion_sum += *t.completion, ++completions;
  }
  nlohmann::ordered_json e{{"scope", scope.empty() ? "experiment" : scope},
                           {"delivered", total.delivered},
                           {"answered", total.answered},
                           {"unanswered", total.unanswered},
                           {"answer_rate", rate(total.answered, total.delivered)},
                           {"avg_reaction_ms", mean(reaction_sum, reactions).count()},
                           {"avg_completion_ms", mean(completion_sum, completions).count()}};
  if (!scope.empty()) {
    if (auto it = metrics.find(scope); it != metrics.end())
      e["verdict"] = to_string(rank_participant(it->second, in.params, as_of).verdict);
  } else {
    std::map<std::string, std::int64_t> verdicts{{"Good", 0}, {"Medium", 0}, {"Poor", 0}};
    for (const auto& [pid, m] : metrics) ++verdicts[std::string(to_string(rank_participant(m, in.params, as_of).verdict))];
    e["verdicts"] = verdicts;
  }
  panels["E"] = std::move(e);

  std::map<SourceRef, std::int64_t> readings;
  for (const auto& ev : scoped)
    if (ev.is_reading()) ++readings[ev.source];
  std::map<SourceRef, std::int64_t> expected;
  if (in.timelines)
    for (const auto& [pid, tl] : *in.timelines) {
      if (!in_scope(pid)) continue;
      for (const auto& entry : tl.entries)
        if (entry.occurrence.source.kind == SourceKind::Sensor && !entry.cancelled &&
            entry.occurrence.scheduled_at <= as_of)
          ++expected[entry.occurrence.source];
    }
  nlohmann::ordered_json sensors = nlohmann::ordered_json::array();
  for (const auto& [src, sc] : index.sensors) {
    bool is_periodic = periodic(*sc);
    nlohmann::ordered_json s{{"source", to_string(src)},
                             {"sensor", sc->sensor.name},
                             {"frequency", cal::format_rrule(sc->rrule)},
                             {"periodic", is_periodic},
                             {"readings", readings[src]}};
    if (is_periodic && in.timelines) {
      s["expected"] = expected[src];
      s["collection_rate"] = rate(std::min(readings[src], expected[src]), expected[src]);
    }
    sensors.push_back(std::move(s));
  }
  panels["F"] = {{"sensors", std::move(sensors)}};

  return {{"as_of", format_iso(as_of)},
          {"offset", in.offset},
          {"role", viewer.researcher ? "researcher" : "participant"},
          {"scope", scope.empty() ? "*" : scope},
          {"panels", std::move(panels)}};
}

} // namespace ilog::quality
