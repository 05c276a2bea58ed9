#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "ilog/catalog.hpp"
#include "ilog/errors.hpp"
#include "ilog/quality.hpp"

using namespace ilog;
using namespace ilog::quality;
using namespace std::chrono_literals;
using sim::EventKind;
using sim::EventLog;

namespace {

Instant day0() { return make_instant(2020, 11, 2); }

struct World {
  cal::ExperimentPlan plan;
  std::map<std::string, schedule::Timeline> timelines;
  sim::SimulationInput input;
  EventLog log;

  World(int participants, std::vector<cal::Category> categories, sim::BehaviorModel model, int days = 7) {
    plan = catalog::time_diary_plan(day0(), "cohort", 10min, days, std::move(categories));
    std::vector<context::ParticipantProfile> profiles;
    for (int i = 0; i < participants; ++i) profiles.push_back({"p" + std::to_string(i), "F", "BSc", "Eng", "UTC"});
    timelines = schedule::compile(plan, profiles);
    input.plan = &plan;
    input.timelines = &timelines;
    input.profiles = profiles;
    input.model = std::move(model);
    for (const auto& p : profiles)
      input.ground_truth[p.id] = sim::generate_ground_truth(p.id, day0(), day0() + (days + 2) * kDay, 31);
    log = sim::run_simulation(input);
  }
};

sim::BehaviorModel answering(double p_answer, double p_correct = 1.0) {
  sim::BehaviorModel m;
  m.seed = 4;
  m.fallback = {p_answer, {std::log(90.0), 0.5}, {std::log(30.0), 0.2}, p_correct};
  return m;
}

std::size_t count_kind(const std::vector<QualityFlag>& flags, FlagKind k) {
  return std::count_if(flags.begin(), flags.end(), [&](const QualityFlag& f) { return f.kind == k; });
}

} // namespace

TEST_SUITE("quality") {

TEST_CASE("ranking examples") {
  QualityParameters p;
  p.max_unanswered = 4;
  p.max_avg_response_time = 10min;
  p.max_avg_completion_time = 2min;
  auto at = day0();
  CHECK(rank_participant({"a", 10, 10, 0, 30s, 20s}, p, at).verdict == Verdict::Good);
  CHECK(rank_participant({"a", 10, 2, 8, 30s, 20s}, p, at).verdict == Verdict::Poor);
  // 5 unanswered against a limit of 4: 1.25 of the limit, inside the 0.5 band.
  CHECK(rank_participant({"a", 10, 5, 5, 30s, 20s}, p, at).verdict == Verdict::Medium);
  CHECK(rank_participant({"a", 10, 10, 0, 15min, 20s}, p, at).verdict == Verdict::Medium);
  CHECK(rank_participant({"a", 10, 10, 0, 15min + 1ms, 20s}, p, at).verdict == Verdict::Poor);
  CHECK(rank_participant({"a", 10, 10, 0, 30s, 2min}, p, at).verdict == Verdict::Good);
  p.band_lower = 0.25;
  CHECK(rank_participant({"a", 10, 5, 5, 30s, 20s}, p, at).verdict == Verdict::Good);
  auto r = rank_participant({"a", 10, 5, 5, 30s, 20s}, p, at);
  CHECK(r == rank_participant({"a", 10, 5, 5, 30s, 20s}, p, at));
  CHECK(r.as_of == at);
  CHECK(r.unanswered_count == 5);
}

TEST_CASE("ranking is monotone") {
  std::mt19937_64 rng(99);
  auto order = [](Verdict v) { return static_cast<int>(v); };
  for (int i = 0; i < 1000; ++i) {
    QualityParameters p;
    p.max_unanswered = 1 + std::int64_t(rng() % 20);
    p.max_avg_response_time = Duration{1 + std::int64_t(rng() % 3600000)};
    p.max_avg_completion_time = Duration{1 + std::int64_t(rng() % 600000)};
    p.band_lower = double(rng() % 50) / 100;
    p.band_upper = p.band_lower + 0.01 + double(rng() % 50) / 100;
    ParticipantMetrics m{"x", 0, 0, std::int64_t(rng() % 40), Duration{std::int64_t(rng() % 7200000)},
                         Duration{std::int64_t(rng() % 1200000)}};
    auto worse = m;
    switch (rng() % 3) {
    case 0: worse.unanswered += std::int64_t(rng() % 10); break;
    case 1: worse.avg_reaction += Duration{std::int64_t(rng() % 3600000)}; break;
    case 2: worse.avg_completion += Duration{std::int64_t(rng() % 600000)}; break;
    }
    CHECK(order(rank_participant(m, p, {}).verdict) <= order(rank_participant(worse, p, {}).verdict));
  }
}

TEST_CASE("quality parameters") {
  QualityParameters p;
  CHECK_NOTHROW(check_params(p));
  CHECK(params_from_json(params_to_json(p)) == p);
  auto bad = p;
  bad.max_unanswered = 0;
  CHECK_THROWS_AS(check_params(bad), ValidationError);
  bad = p;
  bad.band_lower = 0.6;
  CHECK_THROWS_AS(check_params(bad), ValidationError);
  bad = p;
  bad.band_upper = 1.5;
  CHECK_THROWS_AS(check_params(bad), ValidationError);
  CHECK_THROWS_AS(params_from_json(nlohmann::json{{"max_unanswered", "x"}}), ValidationError);
  CHECK_THROWS_AS(params_from_json(nlohmann::json{{"bogus", 1}}), ValidationError);
  CHECK(params_from_json(nlohmann::json{{"max_unanswered", 3}}).max_unanswered == 3);
}

TEST_CASE("metrics match a recount") {
  World w(3, {cal::Category::WE}, answering(0.7));
  auto metrics = participant_metrics(w.log);
  REQUIRE(metrics.size() == 3);
  for (const auto& [pid, m] : metrics) {
    std::int64_t missed = 0, stored = 0;
    for (const auto& e : w.log)
      if (e.participant == pid) {
        missed += e.kind == EventKind::Missed;
        stored += e.kind == EventKind::AnswerStored;
      }
    CHECK(m.unanswered == missed);
    CHECK(m.answered == stored);
    CHECK(m.answered + m.unanswered == m.delivered);
  }
  auto rankings = rank_all(w.log, {});
  CHECK(rankings.size() == 3);
  CHECK(rankings_csv(rankings).starts_with("participant,verdict,"));
}

TEST_CASE("heatmap of a perfect simulation") {
  World w(4, {cal::Category::WE}, answering(1.0));
  auto h = compliance_heatmap(w.log, day0(), day0() + 7 * kDay);
  CHECK(h.participants.size() == 4);
  CHECK(h.days.size() == 7);
  for (const auto& row : h.cells)
    for (const auto& c : row) {
      REQUIRE(c.rate());
      CHECK(*c.rate() == 1.0);
    }
  CHECK(std::none_of(h.empty_day.begin(), h.empty_day.end(), [](bool b) { return b; }));
  CHECK(run_quality_checks(w.log, w.plan, &w.timelines).empty());
}

TEST_CASE("heatmap cells against a brute-force recount") {
  World w(5, {cal::Category::WE}, answering(0.5), 14);
  auto h = compliance_heatmap(w.log, day0(), day0() + 14 * kDay, {"ghost"});
  CHECK(h.participants.front() == "ghost");
  std::size_t within = 0, cells = 0;
  for (std::size_t p = 0; p < h.participants.size(); ++p)
    for (std::size_t d = 0; d < h.days.size(); ++d) {
      std::int64_t delivered = 0, answered = 0;
      for (const auto& e : w.log) {
        if (e.participant != h.participants[p] || e.kind != EventKind::QuestionDelivered) continue;
        if (e.at < h.days[d] || e.at >= h.days[d] + kDay) continue;
        ++delivered;
        answered += std::any_of(w.log.begin(), w.log.end(), [&](const sim::Event& s) {
          return s.kind == EventKind::AnswerStored && s.participant == e.participant && s.source == e.source &&
                 s.seq_no == e.seq_no;
        });
      }
      CHECK(h.cells[p][d].delivered == delivered);
      CHECK(h.cells[p][d].answered == answered);
      if (h.participants[p] == "ghost") {
        CHECK_FALSE(h.cells[p][d].rate());
        continue;
      }
      // First morning has only the 08:00-onward half day.
      if (delivered >= 32) {
        ++cells;
        within += *h.cells[p][d].rate() >= 0.3 && *h.cells[p][d].rate() <= 0.7;
      }
    }
  REQUIRE(cells > 50);
  CHECK(double(within) / double(cells) >= 0.95);
  auto csv = heatmap_csv(h);
  CHECK(csv.starts_with("day,ghost,p0,"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 15);
  CHECK(heatmap_to_json(h)["rows"].size() == 6);
}

TEST_CASE("blackout day") {
  World w(3, {cal::Category::WE}, answering(0.9));
  auto blackout = day0() + 3 * kDay;
  auto log = sim::inject_fault(w.log, sim::BlackoutDay{blackout});
  auto h = compliance_heatmap(log, day0(), day0() + 7 * kDay);
  for (std::size_t d = 0; d < h.days.size(); ++d) {
    CHECK(h.empty_day[d] == (h.days[d] == blackout));
    if (h.days[d] == blackout)
      for (const auto& row : h.cells) CHECK_FALSE(row[d].rate());
  }
  auto flags = run_quality_checks(log, w.plan, &w.timelines);
  REQUIRE(count_kind(flags, FlagKind::MissingDay) == 1);
  auto missing = *std::find_if(flags.begin(), flags.end(), [](const QualityFlag& f) { return f.kind == FlagKind::MissingDay; });
  CHECK(missing.at == blackout);
  CHECK(missing.participant == "*");
  REQUIRE(missing.evidence.size() == 2);
  CHECK(log[missing.evidence[0]].at < blackout);
  CHECK(log[missing.evidence[1]].at >= blackout + kDay);
  // A whole day without 10-minute location readings is also a sensor gap for each participant.
  CHECK(count_kind(flags, FlagKind::SensorGap) == 3);
}

TEST_CASE("answer burst") {
  World w(3, {cal::Category::WE, cal::Category::WA}, answering(1.0));
  auto from = day0() + 2 * kDay;
  auto log = sim::inject_fault(w.log, sim::AnswerBurst{"p1", from, from + 6h});
  auto flags = run_quality_checks(log, w.plan, &w.timelines);
  REQUIRE(count_kind(flags, FlagKind::AnswerBurst) == 1);
  const auto& f = *std::find_if(flags.begin(), flags.end(), [](const QualityFlag& f) { return f.kind == FlagKind::AnswerBurst; });
  CHECK(f.participant == "p1");
  CHECK(f.evidence.size() >= 10);
  for (auto o : f.evidence) {
    REQUIRE(o < log.size());
    CHECK(log[o].kind == EventKind::AnswerStored);
    CHECK(log[o].participant == "p1");
  }
  CHECK(count_kind(run_quality_checks(w.log, w.plan, &w.timelines), FlagKind::AnswerBurst) == 0);
}

TEST_CASE("driving in the library") {
  World w(1, {cal::Category::WE, cal::Category::WA}, answering(1.0), 3);
  auto log = w.log;
  const schedule::SourceRef where{2, 1, 2, schedule::SourceKind::Question};
  const schedule::SourceRef what{2, 1, 1, schedule::SourceKind::Question};
  std::size_t edited = 0;
  for (auto& e : log) {
    if (e.kind != EventKind::AnswerStored || e.seq_no != 20) continue;
    if (e.source == where) e.value = "University Classroom/library", ++edited;
    if (e.source == what) e.value = "Driving", ++edited;
  }
  REQUIRE(edited == 2);
  auto flags = run_quality_checks(log, w.plan, &w.timelines);
  REQUIRE(count_kind(flags, FlagKind::ImplausibleAnswer) == 1);
  const auto& f = *std::find_if(flags.begin(), flags.end(), [](const QualityFlag& f) { return f.kind == FlagKind::ImplausibleAnswer; });
  REQUIRE(f.evidence.size() == 2);
  for (auto o : f.evidence) CHECK(log[o].seq_no == 20u);
  CHECK(f.detail.find("Driving") != std::string::npos);
}

TEST_CASE("location answers against readings") {
  World w(2, {cal::Category::WE}, answering(1.0, 0.0), 3);
  auto flags = run_quality_checks(w.log, w.plan, &w.timelines);
  // Every answer is wrong. Brute force: an answer is flagged iff some Location
  // reading lies within 10 minutes of delivery and none shows the answered class.
  auto timings = sim::derive_timings(w.log);
  std::set<std::size_t> expected;
  std::size_t answers = 0;
  for (std::size_t i = 0; i < w.log.size(); ++i) {
    const auto& e = w.log[i];
    if (e.kind != EventKind::AnswerStored) continue;
    ++answers;
    auto delivered = *timings.at(*sim::key_of(e)).delivered;
    bool any = false, agree = false;
    for (const auto& r : w.log) {
      if (r.participant != e.participant || r.sensor != "Location") continue;
      if (r.at < delivered - 10min || r.at > delivered + 10min) continue;
      any = true;
      agree = agree || r.value->starts_with(std::string(catalog::place_class(*e.value)) + "|");
    }
    if (any && !agree) {
      expected.insert(i);
      // Contexts last at least 20 minutes, so a flagged answer contradicts the truth.
      const auto* ctx = context::find_context(w.input.ground_truth[e.participant], delivered);
      CHECK(catalog::place_class(*e.value) != catalog::place_class(*ctx->we));
    }
  }
  std::set<std::size_t> flagged;
  for (const auto& f : flags)
    if (f.kind == FlagKind::LocationMismatch) flagged.insert(f.evidence.front());
  CHECK(flagged == expected);
  CHECK(flagged.size() > answers / 2);
  for (const auto& f : flags) {
    REQUIRE_FALSE(f.evidence.empty());
    for (auto o : f.evidence) CHECK(o < w.log.size());
  }
  CHECK(flags_csv(flags).starts_with("participant,kind,at,evidence,detail\n"));
  auto csv = flags_csv(flags);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == std::ptrdiff_t(flags.size() + 1));
  auto nd = flags_ndjson(flags);
  CHECK(nlohmann::json::parse(nd.substr(0, nd.find('\n')))["kind"] == "LocationMismatch");
}

TEST_CASE("sensor dropout") {
  World w(2, {cal::Category::WE}, answering(1.0));
  auto from = day0() + kDay, to = day0() + kDay + 6h;
  auto log = sim::inject_fault(w.log, sim::SensorDropout{"Location", from, to});
  for (auto* tl : {&w.timelines, static_cast<decltype(&w.timelines)>(nullptr)}) {
    auto flags = run_quality_checks(log, w.plan, tl);
    CHECK(count_kind(flags, FlagKind::SensorGap) == 2);
    for (const auto& f : flags) {
      if (f.kind != FlagKind::SensorGap) continue;
      CHECK(f.detail.find("missed 36 consecutive") != std::string::npos);
      for (auto o : f.evidence) CHECK(log[o].sensor == "Location");
    }
  }
  // Thirty missed readings are tolerated.
  auto short_gap = sim::inject_fault(w.log, sim::SensorDropout{"Location", from, from + 5h});
  CHECK(count_kind(run_quality_checks(short_gap, w.plan, &w.timelines), FlagKind::SensorGap) == 0);
  // Without timelines a sensor that stops for good goes unnoticed; with them it does not.
  auto tail = sim::inject_fault(w.log, sim::SensorDropout{"Location", day0() + 5 * kDay, day0() + 30 * kDay});
  CHECK(count_kind(run_quality_checks(tail, w.plan, &w.timelines), FlagKind::SensorGap) == 2);
  CHECK(count_kind(run_quality_checks(tail, w.plan), FlagKind::SensorGap) == 0);
}

TEST_CASE("progress") {
  auto plan = catalog::time_diary_plan(day0());
  for (auto& c : plan.calendars)
    for (auto& ctx : c.contexts) {
      for (auto& q : ctx.questions) q.dtstart = day0(), q.dtend = day0() + 28 * kDay;
      for (auto& s : ctx.sensors) s.dtstart = day0(), s.dtend = day0() + 28 * kDay;
    }
  auto p = experiment_progress(plan, day0() + 14 * kDay + 3h);
  CHECK(p.days_total == 28);
  CHECK(p.days_covered == 14);
  CHECK(p.days_left == 14);
  CHECK(experiment_progress(plan, day0() - kDay).days_covered == 0);
  CHECK(experiment_progress(plan, day0() + 90 * kDay).days_left == 0);
}

TEST_CASE("dashboard summary") {
  auto model = answering(0.8);
  model.p_delivery_failure = 0.05;
  World w(4, {cal::Category::WE}, model);
  SummaryInput in{&w.log, &w.plan, &w.timelines, {}, {}, std::nullopt, w.log.size()};

  auto researcher = dashboard_summary(in, {true, ""});
  for (auto panel : {"A", "B", "C", "D", "E", "F"}) CHECK(researcher["panels"].contains(panel));
  CHECK(researcher["panels"]["B"]["enrolled"] == 4);
  CHECK(researcher["panels"]["A"]["read_only"] == false);
  double rate = researcher["panels"]["D"]["delivery_rate"];
  CHECK(std::abs(rate - 0.95) < 0.02);
  CHECK(researcher["offset"] == w.log.size());
  CHECK(researcher["panels"]["E"]["verdicts"].size() == 3);

  auto self = dashboard_summary(in, {false, "p2"});
  CHECK_FALSE(self["panels"].contains("B"));
  CHECK(self["panels"]["A"]["read_only"] == true);
  CHECK(self["scope"] == "p2");
  auto text = self.dump();
  for (auto other : {"p0", "p1", "p3"}) CHECK(text.find(other) == std::string::npos);
  std::int64_t own = 0;
  for (const auto& e : w.log) own += e.participant == "p2" && e.kind == EventKind::QuestionGenerated;
  CHECK(self["panels"]["D"]["generated"] == own);
  CHECK(dashboard_summary(in, {false, "p2"}, "p2") == self);

  CHECK_THROWS_AS(dashboard_summary(in, {false, "p2"}, "p1"), AuthorizationError);
  CHECK_THROWS_AS(dashboard_summary(in, {false, ""}), AuthorizationError);
  CHECK_THROWS_AS(dashboard_summary(in, {false, "p9"}), AuthorizationError);
  auto focus = dashboard_summary(in, {true, ""}, "p2");
  CHECK(focus["panels"].contains("B"));
  CHECK(focus["panels"]["D"] == self["panels"]["D"]);

  for (const auto& s : researcher["panels"]["F"]["sensors"])
    if (s["sensor"] == "Location") CHECK(s["collection_rate"] == 1.0);
  CHECK(dashboard_summary(in, {true, ""}) == researcher);
}

TEST_CASE("exclusion revision") {
  World w(1, {cal::Category::WE}, answering(1.0), 3);
  auto now = day0() + kDay;
  auto tl = schedule::apply_revision(w.timelines["p0"], exclusion_revision("p0", now), {});
  CHECK_FALSE(schedule::next_due(tl, now));
  for (const auto& e : tl.entries) CHECK(e.cancelled == (e.occurrence.scheduled_at >= now));
}

}
