#include <doctest.h>

#include <cmath>
#include <random>

#include "ilog/catalog.hpp"
#include "ilog/errors.hpp"
#include "ilog/schedule.hpp"
#include "ilog/sim.hpp"

using namespace ilog;
using namespace ilog::sim;
using namespace std::chrono_literals;
using schedule::SourceKind;
using schedule::SourceRef;

namespace {

Instant day0() { return make_instant(2020, 11, 2); }

struct World {
  cal::ExperimentPlan plan;
  std::map<std::string, schedule::Timeline> timelines;
  SimulationInput input;

  World(int participants, std::vector<cal::Category> categories, BehaviorModel model, int days = 28) {
    plan = catalog::time_diary_plan(day0(), "cohort", 10min, days, std::move(categories));
    std::vector<context::ParticipantProfile> profiles;
    for (int i = 0; i < participants; ++i)
      profiles.push_back({"p" + std::to_string(i), i % 2 ? "F" : "M", "BSc", "Eng", i % 3 ? "UTC" : "Europe/Rome"});
    timelines = schedule::compile(plan, profiles);
    input.plan = &plan;
    input.timelines = &timelines;
    input.profiles = profiles;
    input.model = std::move(model);
    for (const auto& p : profiles)
      input.ground_truth[p.id] = generate_ground_truth(p.id, day0(), day0() + (days + 2) * kDay, 77);
  }
};

BehaviorModel degenerate(double p_answer) {
  BehaviorModel m;
  m.seed = 1;
  m.fallback = {p_answer, {std::log(60.0), 0}, {std::log(30.0), 0}, 1.0};
  return m;
}

std::size_t count(const EventLog& log, EventKind k) {
  return std::count_if(log.begin(), log.end(), [&](const Event& e) { return e.kind == k; });
}

Event ev(EventKind k, Instant at, std::uint64_t seq = 0) {
  Event e;
  e.participant = "p";
  e.kind = k;
  e.at = at;
  e.source = {2, 1, 1, SourceKind::Question};
  e.seq_no = seq;
  return e;
}

} // namespace

TEST_SUITE("sim") {

TEST_CASE("samplers") {
  Rng a(9), b(9);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());
  Rng r(3);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double u = r.uniform();
    REQUIRE(u >= 0);
    REQUIRE(u < 1);
    double z = r.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1) < 0.02);
  CHECK(LogNormal{std::log(42.0), 0}.sample(r) == 42s);
  for (int i = 0; i < 1000; ++i) CHECK(r.below(7) < 7);
}

TEST_CASE("calibration against Monte Carlo") {
  // Independent estimate with the standard library's log-normal sampler.
  auto monte_carlo = [](const ResponseCell& c) {
    std::mt19937_64 g(11);
    std::lognormal_distribution<double> reaction(c.reaction.mu, c.reaction.sigma);
    std::lognormal_distribution<double> completion(c.completion.mu, c.completion.sigma);
    const int n = 400000;
    int hits = 0;
    for (int i = 0; i < n; ++i) hits += reaction(g) + completion(g) <= 1800.0;
    return c.p_answer * hits / n;
  };
  for (auto [place, rate] : location_rates()) {
    CAPTURE(place);
    auto cell = calibrated_cell(rate, rate);
    CHECK(std::abs(high_quality_probability(cell) - rate) < 1e-6);
    CHECK(std::abs(monte_carlo(cell) - rate) < 0.005);
    CHECK(cell.p_correct == rate);
  }
  CHECK(calibrated_cell(0, 0.5).p_answer == 0);
  CHECK_THROWS_AS(calibrated_cell(0.95, 0.5), ValidationError);
  ResponseCell slow{0.9, {std::log(3600.0), 0}, {std::log(10.0), 0}, 1};
  CHECK(high_quality_probability(slow) == doctest::Approx(0).epsilon(1e-9));
}

TEST_CASE("model checks and JSON") {
  auto m = location_model(5);
  CHECK(m.rules.size() == 9);
  CHECK(model_from_json(model_to_json(m)) == m);
  auto j = nlohmann::json::parse(R"({"seed":3,"delivery_latency_ms":2000,
    "fallback":{"p_high":0.4,"p_correct":0.6},
    "rules":[{"location":"Home","cell":{"p_high":0.5,"p_correct":0.7}}]})");
  auto parsed = model_from_json(j);
  CHECK(parsed.delivery_latency == 2s);
  CHECK(parsed.fallback == calibrated_cell(0.4, 0.6));
  CHECK(parsed.resolve("Home", "Alone", 1, DayPeriod::Morning) == calibrated_cell(0.5, 0.7));
  CHECK(parsed.resolve("Gym", "Alone", 1, DayPeriod::Morning) == parsed.fallback);

  BehaviorModel bad;
  bad.fallback.p_answer = 1.5;
  CHECK_THROWS_AS(check_model(bad), ValidationError);
  bad = {};
  bad.fallback.reaction.sigma = -1;
  CHECK_THROWS_AS(check_model(bad), ValidationError);

  BehaviorModel rules;
  rules.rules.push_back({std::nullopt, std::string("Alone"), std::nullopt, DayPeriod::Night, calibrated_cell(0.1, 0.1)});
  rules.rules.push_back({std::nullopt, std::nullopt, 6, std::nullopt, calibrated_cell(0.2, 0.2)});
  CHECK(rules.resolve("Home", "Alone", 6, DayPeriod::Night) == rules.rules[0].cell);
  CHECK(rules.resolve("Home", "Friend", 6, DayPeriod::Night) == rules.rules[1].cell);
  CHECK(rules.resolve("Home", "Friend", 5, DayPeriod::Night) == rules.fallback);
}

TEST_CASE("ground truth") {
  auto start = day0() + 7min, end = day0() + 10 * kDay;
  auto gt = generate_ground_truth("p1", start, end, 4);
  REQUIRE(!gt.contexts.empty());
  CHECK(gt.contexts.front().start == start);
  CHECK(gt.contexts.back().end == end);
  for (std::size_t i = 0; i < gt.contexts.size(); ++i) {
    const auto& c = gt.contexts[i];
    CHECK_NOTHROW(context::check_context(c));
    REQUIRE(c.we);
    REQUIRE(!c.wa.empty());
    for (const auto& a : c.wa) CHECK_FALSE(catalog::implausible_pair(a, *c.we));
    if (i + 1 < gt.contexts.size()) {
      CHECK(c.end == gt.contexts[i + 1].start);
      CHECK((c.end - day0()) % kMinute == Duration::zero());
    }
  }
  CHECK(generate_ground_truth("p1", start, end, 4).contexts == gt.contexts);
  CHECK(generate_ground_truth("p2", start, end, 4).contexts != gt.contexts);

  context::SituationalContext alone;
  alone.we = "Home";
  CHECK(truth_label(alone, cal::Category::WO) == "Alone");
  CHECK_FALSE(truth_label(alone, cal::Category::WA));
  CHECK(truth_label(alone, cal::Category::WE) == "Home");
}

TEST_CASE("perfect participants") {
  World w(3, {cal::Category::WE, cal::Category::WO}, degenerate(1.0), 7);
  auto log = run_simulation(w.input);
  CHECK_NOTHROW(check_lifecycle(log));
  auto timings = derive_timings(log);
  std::size_t questions = 0;
  for (const auto& [pid, tl] : w.timelines) questions += schedule::active(tl, SourceKind::Question).size();
  CHECK(timings.size() == questions);
  for (const auto& [key, m] : timings) {
    REQUIRE(m.delivered);
    CHECK(*m.delivered - *m.generated == 5s);
    CHECK(m.reaction == Duration{60s});
    CHECK(m.completion == Duration{30s});
    CHECK(m.delay == Duration{95s});
    CHECK_FALSE(m.missed);
  }
  CHECK(count(log, EventKind::Missed) == 0);

  // Answers name the ground-truth label at delivery whenever it is an option.
  auto plan_index = [&](const SourceRef& s) -> const cal::Question* {
    for (const auto& c : w.plan.calendars)
      for (const auto& ctx : c.contexts)
        for (const auto& q : ctx.questions)
          if (q.cid == s.collection && c.id == s.calendar && ctx.id == s.context) return &q.question;
    return nullptr;
  };
  std::size_t checked = 0;
  for (const auto& e : log) {
    if (e.kind != EventKind::AnswerStored) continue;
    CHECK(e.correct == true);
    const auto* q = plan_index(e.source);
    REQUIRE(q);
    const auto* ctx = context::find_context(w.input.ground_truth[e.participant], e.at - 90s);
    REQUIRE(ctx);
    auto label = truth_label(*ctx, q->category);
    REQUIRE(label);
    if (std::find(q->options.begin(), q->options.end(), *label) != q->options.end()) {
      CHECK(e.value == *label);
      ++checked;
    } else {
      CHECK(std::find(q->options.begin(), q->options.end(), *e.value) != q->options.end());
    }
  }
  CHECK(checked > questions / 2);
}

TEST_CASE("participants who never answer") {
  World w(2, {cal::Category::WE}, degenerate(0.0), 7);
  auto log = run_simulation(w.input);
  CHECK(count(log, EventKind::AnswerStored) == 0);
  CHECK(count(log, EventKind::AnswerStarted) == 0);
  CHECK(count(log, EventKind::Missed) == count(log, EventKind::QuestionGenerated));
  for (const auto& [pid, tl] : w.timelines)
    for (const auto& entry : tl.entries) {
      if (entry.occurrence.source.kind != SourceKind::Question) continue;
      auto m = derive_timing(log, {pid, entry.occurrence.source, entry.occurrence.seq_no});
      CHECK(m.missed == std::max(entry.occurrence.window_end, *m.delivered));
      CHECK_FALSE(m.reaction);
    }
}

TEST_CASE("delivery failures") {
  auto model = degenerate(1.0);
  model.p_delivery_failure = 1.0;
  World w(1, {cal::Category::WE}, model, 7);
  auto log = run_simulation(w.input);
  CHECK(count(log, EventKind::QuestionDelivered) == 0);
  CHECK(count(log, EventKind::Missed) == count(log, EventKind::QuestionGenerated));
  auto timings = derive_timings(log);
  CHECK(timings.size() == count(log, EventKind::QuestionGenerated));
  const auto& [key, m] = *timings.begin();
  CHECK_FALSE(m.delivered);
  CHECK_THROWS_AS(derive_timing(log, key), LifecycleError);
}

TEST_CASE("per-location answer rates") {
  World w(10, {cal::Category::WE}, location_model(17));
  auto log = run_simulation(w.input);
  struct Tally {
    int delivered = 0, fast = 0, answered = 0, correct = 0;
  };
  std::map<std::string, Tally> by_place;
  auto timings = derive_timings(log);
  std::map<OccurrenceKey, bool> correctness;
  for (const auto& e : log)
    if (e.kind == EventKind::AnswerStored) correctness[*key_of(e)] = e.correct.value_or(false);
  for (const auto& [key, m] : timings) {
    const auto* ctx = context::find_context(w.input.ground_truth[key.participant], *m.delivered);
    REQUIRE(ctx);
    auto& t = by_place[*ctx->we];
    ++t.delivered;
    if (m.stored) {
      ++t.answered;
      t.correct += correctness[key];
      t.fast += *m.stored - *m.delivered <= 30min;
    }
  }
  for (auto [place, rate] : location_rates()) {
    CAPTURE(place);
    const auto& t = by_place[place];
    REQUIRE(t.delivered > 400);
    CHECK(std::abs(double(t.fast) / t.delivered - rate) < 0.05);
    CHECK(std::abs(double(t.correct) / t.answered - rate) < 0.05);
  }
}

TEST_CASE("sensor readings") {
  World w(2, {cal::Category::WE}, location_model(2), 7);
  auto log = run_simulation(w.input);
  std::map<std::tuple<std::string, SourceRef, std::uint64_t>, Instant> planned;
  for (const auto& [pid, tl] : w.timelines)
    for (const auto& e : tl.entries) planned[{pid, e.occurrence.source, e.occurrence.seq_no}] = e.occurrence.scheduled_at;
  std::size_t location = 0, wifi = 0;
  for (const auto& e : log) {
    if (!e.is_reading()) continue;
    REQUIRE(e.value);
    if (e.sensor == "Location") {
      ++location;
      REQUIRE(e.seq_no);
      CHECK(planned.at({e.participant, e.source, *e.seq_no}) == e.at);
      auto bar = e.value->find('|');
      REQUIRE(bar != std::string::npos);
      const auto* ctx = context::find_context(w.input.ground_truth[e.participant], e.at);
      CHECK(e.value->substr(0, bar) == catalog::place_class(*ctx->we));
    } else if (e.sensor == "WIFI Network Connected to") {
      ++wifi;
      CHECK_FALSE(e.seq_no);
    }
  }
  CHECK(location == 2 * 7 * 24 * 6);
  CHECK(wifi > 2 * 7);
}

TEST_CASE("coverage") {
  World w(1, {cal::Category::WE}, degenerate(1.0), 7);
  for (auto& c : w.input.ground_truth["p0"].contexts) c.we.reset();
  CHECK_THROWS_AS(run_simulation(w.input), CoverageError);
  World ok(1, {cal::Category::WO}, degenerate(1.0), 7);
  for (auto& c : ok.input.ground_truth["p0"].contexts) c.wo.clear();
  CHECK_NOTHROW(run_simulation(ok.input));

  World dup(1, {cal::Category::WE}, degenerate(1.0), 7);
  dup.input.profiles.push_back(dup.input.profiles.front());
  CHECK_THROWS_AS(run_simulation(dup.input), DuplicateIdError);
}

TEST_CASE("determinism") {
  World w(6, {cal::Category::WE, cal::Category::WA}, location_model(8), 7);
  auto parallel = run_simulation(w.input);
  auto serial = run_simulation_serial(w.input);
  CHECK(log_digest(parallel) == log_digest(serial));
  CHECK(parallel == serial);
  CHECK(std::is_sorted(parallel.begin(), parallel.end(), event_less));
  auto again = run_simulation(w.input);
  CHECK(log_digest(again) == log_digest(parallel));
  w.input.model.seed = 9;
  CHECK(log_digest(run_simulation(w.input)) != log_digest(parallel));

  // A participant's stream does not depend on who else is simulated.
  auto alone = simulate_participant(w.input, w.input.profiles[3]);
  w.input.profiles.erase(w.input.profiles.begin());
  auto fewer = run_simulation(w.input);
  EventLog p3;
  std::copy_if(fewer.begin(), fewer.end(), std::back_inserter(p3), [](const Event& e) { return e.participant == "p3"; });
  CHECK(p3 == alone);
}

TEST_CASE("event log files") {
  World w(2, {cal::Category::WE}, location_model(8), 3);
  auto log = run_simulation(w.input);
  auto text = write_event_log(log);
  CHECK(text.starts_with(R"({"schema":"ilog.events","version":1})"));
  CHECK(read_event_log(text) == log);
  CHECK(read_event_log(write_event_log({})).empty());
  CHECK_THROWS_AS(read_event_log(""), SchemaError);
  CHECK_THROWS_AS(read_event_log(R"({"schema":"ilog.events","version":2})"), SchemaError);
  CHECK_THROWS_AS(read_event_log(std::string(R"({"schema":"ilog.events","version":1})") + "\n{\"kind\":\"Nope\"}\n"),
                  SchemaError);
  auto j = event_to_json(log.front());
  j.erase("at");
  CHECK_THROWS_AS(event_from_json(j), SchemaError);
}

TEST_CASE("timing from a hand-written log") {
  auto t = day0();
  EventLog log{ev(EventKind::QuestionGenerated, t), ev(EventKind::QuestionDelivered, t + 5s),
               ev(EventKind::AnswerStarted, t + 65s), ev(EventKind::AnswerStored, t + 125s)};
  OccurrenceKey key{"p", {2, 1, 1, SourceKind::Question}, 0};
  auto m = derive_timing(log, key);
  CHECK(m.reaction == Duration{60s});
  CHECK(m.completion == Duration{60s});
  CHECK(m.delay == Duration{125s});

  EventLog missed{ev(EventKind::QuestionGenerated, t), ev(EventKind::QuestionDelivered, t + 5s),
                  ev(EventKind::Missed, t + 30min)};
  auto mm = derive_timing(missed, key);
  CHECK(mm.missed == t + 30min);
  CHECK_FALSE(mm.delay);

  CHECK_THROWS_AS(derive_timing({ev(EventKind::QuestionGenerated, t)}, key), LifecycleError);
  CHECK_THROWS_AS(derive_timing({ev(EventKind::QuestionDelivered, t), ev(EventKind::AnswerStored, t + 1s)}, key),
                  LifecycleError);
  CHECK_THROWS_AS(derive_timing({ev(EventKind::QuestionDelivered, t), ev(EventKind::AnswerStarted, t - 1s)}, key),
                  LifecycleError);
  CHECK_THROWS_AS(derive_timing({ev(EventKind::QuestionDelivered, t), ev(EventKind::QuestionDelivered, t)}, key),
                  LifecycleError);
  CHECK_THROWS_AS(derive_timing({ev(EventKind::QuestionDelivered, t), ev(EventKind::AnswerStarted, t + 1s),
                                 ev(EventKind::AnswerStored, t + 2s), ev(EventKind::Missed, t + 3s)},
                                key),
                  LifecycleError);

  EventLog mixed = log;
  mixed.push_back(ev(EventKind::AnswerStarted, t, 1));
  mixed.push_back(ev(EventKind::QuestionDelivered, t + 1s, 1));
  CHECK_THROWS_AS(check_lifecycle(mixed), LifecycleError);
  auto lenient = derive_timings(mixed, false);
  CHECK(lenient.size() == 1);
  CHECK(lenient.begin()->first.seq_no == 0);
}

TEST_CASE("faults") {
  World w(3, {cal::Category::WE}, location_model(8), 7);
  auto log = run_simulation(w.input);

  auto day = day0() + 2 * kDay + 13h;
  auto dark = inject_fault(log, BlackoutDay{day});
  CHECK(std::none_of(dark.begin(), dark.end(), [&](const Event& e) { return day_index(e.at) == day_index(day); }));
  CHECK(dark.size() < log.size());
  CHECK_NOTHROW(derive_timings(dark, false));

  auto from = day0() + kDay, to = day0() + 3 * kDay;
  auto dropped = inject_fault(log, SensorDropout{"Location", from, to});
  CHECK(std::none_of(dropped.begin(), dropped.end(), [&](const Event& e) {
    return e.sensor == "Location" && e.at >= from && e.at < to;
  }));
  CHECK(log.size() - dropped.size() == 3 * 2 * 24 * 6);

  auto burst = inject_fault(log, AnswerBurst{"p1", from, from + 12h});
  CHECK_NOTHROW(check_lifecycle(burst));
  std::vector<Instant> stored;
  for (const auto& e : log)
    if (e.kind == EventKind::AnswerStored && e.participant == "p1" && e.at >= from && e.at < from + 12h)
      stored.push_back(e.at);
  REQUIRE(stored.size() > 5);
  std::vector<Instant> moved;
  auto burst_timings = derive_timings(burst);
  for (const auto& [key, m] : derive_timings(log))
    if (key.participant == "p1" && m.stored && *m.stored >= from && *m.stored < from + 12h)
      moved.push_back(*burst_timings.at(key).stored);
  REQUIRE(moved.size() == stored.size());
  auto [lo, hi] = std::minmax_element(moved.begin(), moved.end());
  CHECK(*hi - *lo < 1min);
  CHECK(inject_fault(log, AnswerBurst{"nobody", from, to}) == log);
}

}
