#include <doctest.h>

#include <random>

#include "ilog/catalog.hpp"
#include "ilog/errors.hpp"
#include "ilog/schedule.hpp"
#include "oracles/expansion.hpp"

using namespace ilog;
using namespace ilog::schedule;
using cal::Frequency;
using cal::RecurrenceRule;
using namespace std::chrono_literals;

namespace {

Instant day0() { return make_instant(2020, 11, 2); }

// Diary WA question only, plus the location and Wi-Fi sensors.
cal::ExperimentPlan diary_plan() { return catalog::time_diary_plan(day0(), "cohort", 10min, 28, {cal::Category::WA}); }

const SourceRef kPhase1{2, 1, 1, SourceKind::Question};
const SourceRef kPhase2{2, 1, 11, SourceKind::Question};
const SourceRef kLocation{2, 1, 1, SourceKind::Sensor};

Revision rev(Actor actor, Target target, Change change, Instant issued) {
  return {actor, "p1", std::move(target), std::move(change), issued};
}

std::vector<Entry> of(const Timeline& tl, const SourceRef& s) {
  std::vector<Entry> out;
  for (const auto& e : tl.entries)
    if (e.occurrence.source == s) out.push_back(e);
  return out;
}

RecurrenceRule random_rule(std::mt19937_64& rng, Instant& start, Instant& end) {
  auto f = static_cast<Frequency>(std::uniform_int_distribution<int>(0, 7)(rng));
  // Keep the brute-force walk short: at most ~2M unit steps and 60 days.
  Duration max_window = 60 * kDay;
  if (f == Frequency::Millisecond) max_window = 20min;
  if (f == Frequency::Second) max_window = 20 * kDay;
  auto window = Duration{std::uniform_int_distribution<std::int64_t>(1, max_window.count())(rng)};
  start = make_instant(2019, 1, 1) + Duration{std::uniform_int_distribution<std::int64_t>(0, 3LL * 365 * 86400000)(rng)};
  if (f != Frequency::Millisecond && rng() % 2) start = std::chrono::floor<std::chrono::seconds>(start);
  end = start + window;
  std::uint64_t interval = rng() % 4 == 0 ? 1 : std::uniform_int_distribution<std::uint64_t>(1, 500)(rng);
  std::uint64_t count = rng() % 3 == 0 ? 1'000'000'000 : std::uniform_int_distribution<std::uint64_t>(1, 3000)(rng);
  return {f, interval, count};
}

} // namespace

TEST_SUITE("schedule") {

TEST_CASE("a GPS reading every minute for 48 days") {
  auto s = day0();
  auto xs = expand({Frequency::Minute, 1, 69120}, s, s + 48 * kDay);
  REQUIRE(xs.size() == 69120);
  CHECK(xs.front() == s);
  CHECK(xs.back() == s + 47 * kDay + 23h + 59min);
}

TEST_CASE("COUNT=1 yields dtstart") {
  for (int f = 0; f < 8; ++f) {
    auto xs = expand({static_cast<Frequency>(f), 7, 1}, day0(), day0() + 1h);
    REQUIRE(xs.size() == 1);
    CHECK(xs[0] == day0());
  }
}

TEST_CASE("half-hourly diary matches the minute-stepping oracle") {
  RecurrenceRule r{Frequency::Minute, 30, 672};
  auto s = day0() + 8h, e = s + 14 * kDay;
  auto xs = expand(r, s, e);
  CHECK(xs.size() == 672);
  CHECK(xs == oracle::expand(r, s, e));
  for (std::size_t i = 1; i < xs.size(); ++i) CHECK(xs[i] - xs[i - 1] == 30min);
}

TEST_CASE("random rules against the oracle") {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 300; ++i) {
    Instant s, e;
    auto r = random_rule(rng, s, e);
    CAPTURE(cal::format_rrule(r));
    CAPTURE(format_iso(s));
    CAPTURE(format_iso(e));
    auto got = expand(r, s, e);
    CHECK(got == oracle::expand(r, s, e));
    CHECK(got.size() <= r.count);
    CHECK(got.size() == expansion_size(r, s, e));
    CHECK(std::is_sorted(got.begin(), got.end()));
    CHECK(std::adjacent_find(got.begin(), got.end()) == got.end());
  }
}

TEST_CASE("monthly and yearly clamping") {
  auto jan31 = make_instant(2020, 1, 31, 9);
  auto xs = expand({Frequency::Monthly, 1, 6}, jan31, make_instant(2021, 1, 1));
  std::vector<Instant> want{jan31,
                            make_instant(2020, 2, 29, 9),
                            make_instant(2020, 3, 31, 9),
                            make_instant(2020, 4, 30, 9),
                            make_instant(2020, 5, 31, 9),
                            make_instant(2020, 6, 30, 9)};
  CHECK(xs == want);
  CHECK(xs == oracle::expand({Frequency::Monthly, 1, 6}, jan31, make_instant(2021, 1, 1)));

  auto leap = make_instant(2020, 2, 29);
  auto ys = expand({Frequency::Yearly, 1, 5}, leap, make_instant(2030, 1, 1));
  CHECK(ys == std::vector<Instant>{leap, make_instant(2021, 2, 28), make_instant(2022, 2, 28),
                                   make_instant(2023, 2, 28), make_instant(2024, 2, 29)});
  CHECK(ys == oracle::expand({Frequency::Yearly, 1, 5}, leap, make_instant(2030, 1, 1)));

  auto every_other = expand({Frequency::Monthly, 2, 100}, make_instant(2021, 8, 31), make_instant(2022, 6, 1));
  CHECK(every_other == std::vector<Instant>{make_instant(2021, 8, 31), make_instant(2021, 10, 31),
                                            make_instant(2021, 12, 31), make_instant(2022, 2, 28),
                                            make_instant(2022, 4, 30)});
}

TEST_CASE("expansion cap and bad windows") {
  CHECK_THROWS_AS(expand({Frequency::Millisecond, 1, 20'000'000}, day0(), day0() + kDay), OverflowError);
  CHECK(expand({Frequency::Millisecond, 1, 20'000'000}, day0(), day0() + kDay, 30'000'000).size() == 20'000'000);
  CHECK_THROWS_AS(expand({Frequency::Daily, 1, 3}, day0(), day0()), ValidationError);
  CHECK(expand({Frequency::Yearly, 1'000'000'000'000ULL, 5}, day0(), day0() + kDay).size() == 1);
}

TEST_CASE("source references") {
  CHECK(to_string(kPhase1) == "2/1/Q1");
  CHECK(to_string(kLocation) == "2/1/S1");
  CHECK(parse_source("2/1/Q1") == kPhase1);
  CHECK_FALSE(parse_source("2/1/X1"));
  CHECK_FALSE(parse_source("2/1"));
  CHECK_FALSE(parse_source("a/1/Q1"));
}

TEST_CASE("compile") {
  auto plan = diary_plan();
  auto tls = compile(plan, {{"p1", "F", "BSc", "Eng", "UTC"}, {"p2", "M", "MSc", "Eng", "UTC"}});
  REQUIRE(tls.size() == 2);
  CHECK(tls["p1"].entries == tls["p2"].entries);

  const auto& tl = tls["p1"];
  CHECK(std::is_sorted(tl.entries.begin(), tl.entries.end(), [](const Entry& a, const Entry& b) {
    return a.occurrence.scheduled_at < b.occurrence.scheduled_at;
  }));
  auto questions = active(tl, SourceKind::Question);
  // Two phases: every 30 minutes for 14 days, then hourly for 14 days.
  auto p1 = oracle::expand({Frequency::Minute, 30, 672}, day0() + 8h, day0() + 8h + 14 * kDay);
  auto p2 = oracle::expand({Frequency::Hour, 1, 336}, day0() + 8h + 14 * kDay, day0() + 8h + 28 * kDay);
  CHECK(questions.size() == p1.size() + p2.size());
  CHECK(questions.size() == 1008);

  for (const auto& e : tl.entries) {
    const auto* c = tl.collection(e.occurrence.source);
    REQUIRE(c);
    CHECK(e.occurrence.scheduled_at >= c->dtstart);
    CHECK(e.occurrence.scheduled_at < c->dtend);
    CHECK(e.occurrence.seq_no < c->rrule.count);
  }
  auto phase1 = of(tl, kPhase1);
  CHECK(phase1[0].occurrence.window_end == phase1[1].occurrence.scheduled_at);
  CHECK(phase1.back().occurrence.window_end == tl.collection(kPhase1)->dtend);

  auto rejected = plan;
  for (auto& q : rejected.calendars[0].contexts[0].questions) q.accepted = false;
  auto only_sensors = compile_one(rejected, "p1");
  CHECK(active(only_sensors, SourceKind::Question).empty());
  CHECK(active(only_sensors, SourceKind::Sensor).size() == active(tl, SourceKind::Sensor).size());
  CHECK(only_sensors.collections.size() == tl.collections.size());
}

TEST_CASE("compile reports the collection that overflows") {
  auto plan = diary_plan();
  plan.calendars[0].contexts[0].sensors[0].rrule = {Frequency::Millisecond, 1, 100'000'000};
  try {
    compile_one(plan, "p1");
    FAIL("expected overflow");
  } catch (const OverflowError& e) {
    CHECK(std::string(e.what()).find("calendar[2]/context[1]/sensor[1]") != std::string::npos);
  }
}

TEST_CASE("researcher cancels a day") {
  auto tl = compile_one(diary_plan(), "p1");
  auto day = day0() + 3 * kDay;
  auto r = rev(Actor::Researcher, SpanTarget{day, day + kDay, SourceKind::Question}, Cancel{}, day0());
  auto after = apply_revision(tl, r, RevisionPolicy{});
  CHECK(after.version() == tl.version() + 1);
  std::size_t cancelled = 0;
  for (const auto& e : after.entries) {
    bool in_day = e.occurrence.scheduled_at >= day && e.occurrence.scheduled_at < day + kDay &&
                  e.occurrence.source.kind == SourceKind::Question;
    CHECK(e.cancelled == in_day);
    cancelled += e.cancelled;
  }
  CHECK(cancelled == 48);
  CHECK(after.audit.back().affected == 48);
  // Window of the last occurrence before the gap now runs to the next live one.
  auto phase1 = of(after, kPhase1);
  auto last_before = std::find_if(phase1.begin(), phase1.end(), [&](const Entry& e) {
    return e.occurrence.scheduled_at >= day - 30min;
  });
  CHECK(last_before->occurrence.window_end == day + kDay);
}

TEST_CASE("participant and platform bounds") {
  auto tl = compile_one(diary_plan(), "p1");
  RevisionPolicy policy;
  auto now = day0();
  auto target = OccurrenceTarget{kPhase1, 10};
  auto planned = of(tl, kPhase1)[10].occurrence.scheduled_at;

  try {
    apply_revision(tl, rev(Actor::Participant, target, Shift{2h}, now), policy);
    FAIL("expected a policy violation");
  } catch (const PolicyViolation& e) {
    CHECK(e.actor() == "participant");
    CHECK(e.limit() == "max_participant_shift");
  }
  auto ok = apply_revision(tl, rev(Actor::Participant, target, Shift{45min}, now), policy);
  CHECK(ok.version() == 1);

  auto platform = apply_revision(tl, rev(Actor::Platform, target, Shift{-15min}, now), policy);
  auto moved = of(platform, kPhase1);
  auto it = std::find_if(moved.begin(), moved.end(), [](const Entry& e) { return e.occurrence.seq_no == 10; });
  REQUIRE(it != moved.end());
  CHECK(it->occurrence.scheduled_at == planned - 15min);
  // The shifted instant falls between the oracle's occurrences 9 and 10, and
  // occurrence 9's window now closes at the shifted instant.
  auto grid = oracle::expand({Frequency::Minute, 30, 672}, day0() + 8h, day0() + 8h + 14 * kDay);
  CHECK(it->occurrence.scheduled_at > grid[9]);
  CHECK(it->occurrence.scheduled_at < grid[10]);
  auto nine = std::find_if(moved.begin(), moved.end(), [](const Entry& e) { return e.occurrence.seq_no == 9; });
  CHECK(nine->occurrence.window_end == planned - 15min);

  CHECK_THROWS_AS(apply_revision(tl, rev(Actor::Platform, target, Shift{-40min}, now), policy), PolicyViolation);
  // The platform is bounded by the participant's bound as well.
  RevisionPolicy tight = policy;
  tight.max_participant_shift = 10min;
  CHECK_THROWS_AS(apply_revision(tl, rev(Actor::Platform, target, Shift{-15min}, now), tight), PolicyViolation);
  CHECK_NOTHROW(apply_revision(tl, rev(Actor::Researcher, target, Shift{5h}, now), tight));

  RevisionPolicy frozen = policy;
  frozen.frozen_collections.insert(kPhase1);
  CHECK_THROWS_AS(apply_revision(tl, rev(Actor::Platform, target, Shift{5min}, now), frozen), PolicyViolation);
  CHECK_THROWS_AS(apply_revision(tl, rev(Actor::Participant, target, Cancel{}, now), frozen), PolicyViolation);
  CHECK_NOTHROW(apply_revision(tl, rev(Actor::Researcher, target, Cancel{}, now), frozen));
}

TEST_CASE("cancellations per day") {
  auto tl = compile_one(diary_plan(), "p1");
  RevisionPolicy policy;
  for (std::uint64_t k = 0; k < 4; ++k)
    tl = apply_revision(tl, rev(Actor::Participant, OccurrenceTarget{kPhase1, k}, Cancel{}, day0()), policy);
  CHECK_THROWS_AS(apply_revision(tl, rev(Actor::Participant, OccurrenceTarget{kPhase1, 4}, Cancel{}, day0()), policy),
                  PolicyViolation);
  // Next day is a fresh budget.
  CHECK_NOTHROW(apply_revision(tl, rev(Actor::Participant, OccurrenceTarget{kPhase1, 40}, Cancel{}, day0()), policy));
  CHECK_THROWS_AS(apply_revision(tl, rev(Actor::Participant, SpanTarget{day0() + 5 * kDay, day0() + 6 * kDay, {}},
                                         Cancel{}, day0()),
                                 policy),
                  PolicyViolation);
}

TEST_CASE("the past is immutable") {
  auto tl = compile_one(diary_plan(), "p1");
  auto now = day0() + 2 * kDay;
  CHECK_THROWS_AS(apply_revision(tl, rev(Actor::Researcher, OccurrenceTarget{kPhase1, 0}, Cancel{}, now), {}),
                  ImmutablePast);
  // A shift may not move a future occurrence into the past either.
  auto next = next_due(tl, now);
  REQUIRE(next);
  CHECK_THROWS_AS(apply_revision(tl, rev(Actor::Researcher, OccurrenceTarget{next->source, next->seq_no},
                                         Shift{-1h}, now), {}),
                  ImmutablePast);
  auto all = apply_revision(tl, rev(Actor::Researcher, CollectionTarget{kPhase1}, Cancel{}, now), {});
  for (std::size_t i = 0; i < tl.entries.size(); ++i) {
    if (tl.entries[i].occurrence.scheduled_at < now) {
      CAPTURE(i);
      CAPTURE(format_iso(tl.entries[i].occurrence.window_end));
      CAPTURE(format_iso(all.entries[i].occurrence.window_end));
      CHECK(all.entries[i] == tl.entries[i]);
    }
  }
  CHECK_THROWS_AS(apply_revision(tl, rev(Actor::Participant, OccurrenceTarget{kPhase1, 5000}, Cancel{}, day0()), {}),
                  ValidationError);
}

TEST_CASE("reinstating respects the hierarchy") {
  auto tl = compile_one(diary_plan(), "p1");
  RevisionPolicy policy;
  auto target = OccurrenceTarget{kPhase1, 20};
  auto by_researcher = apply_revision(tl, rev(Actor::Researcher, target, Cancel{}, day0()), policy);
  CHECK_THROWS_AS(apply_revision(by_researcher, rev(Actor::Participant, target, Reinstate{}, day0()), policy),
                  PolicyViolation);
  CHECK_THROWS_AS(apply_revision(by_researcher, rev(Actor::Platform, target, Reinstate{}, day0()), policy),
                  PolicyViolation);
  auto back = apply_revision(by_researcher, rev(Actor::Researcher, target, Reinstate{}, day0()), policy);
  CHECK(back.entries == tl.entries);

  auto by_participant = apply_revision(tl, rev(Actor::Participant, target, Cancel{}, day0()), policy);
  CHECK_THROWS_AS(apply_revision(by_participant, rev(Actor::Platform, target, Reinstate{}, day0()), policy),
                  PolicyViolation);
  CHECK_NOTHROW(apply_revision(by_participant, rev(Actor::Participant, target, Reinstate{}, day0()), policy));
}

TEST_CASE("accepting a rejected collection later") {
  auto plan = diary_plan();
  plan.calendars[0].contexts[0].questions[0].accepted = false;
  auto tl = compile_one(plan, "p1");
  CHECK(of(tl, kPhase1).empty());
  auto now = day0() + 2 * kDay;
  CHECK_THROWS_AS(apply_revision(tl, rev(Actor::Platform, CollectionTarget{kPhase1}, Reinstate{}, now), {}),
                  PolicyViolation);
  auto accepted = apply_revision(tl, rev(Actor::Participant, CollectionTarget{kPhase1}, Reinstate{}, now), {});
  auto entries = of(accepted, kPhase1);
  auto grid = oracle::expand({Frequency::Minute, 30, 672}, day0() + 8h, day0() + 8h + 14 * kDay);
  std::vector<Instant> future;
  for (auto t : grid)
    if (t >= now) future.push_back(t);
  REQUIRE(entries.size() == future.size());
  CHECK(entries.front().occurrence.scheduled_at == future.front());
  CHECK(entries.front().occurrence.seq_no == grid.size() - future.size());
  CHECK_FALSE(accepted.audit.back().note.empty());
}

TEST_CASE("frequency override") {
  auto tl = compile_one(diary_plan(), "p1");
  auto now = day0() + 7 * kDay + 8h;
  auto before = of(tl, kPhase1);
  auto remaining = std::count_if(before.begin(), before.end(),
                                 [&](const Entry& e) { return e.occurrence.scheduled_at >= now; });
  auto halved = apply_revision(tl, rev(Actor::Researcher, CollectionTarget{kPhase1},
                                       FrequencyOverride{{Frequency::Hour, 1, 1000}}, now), {});
  auto after = of(halved, kPhase1);
  auto remaining_after = std::count_if(after.begin(), after.end(),
                                       [&](const Entry& e) { return e.occurrence.scheduled_at >= now; });
  CHECK(remaining_after == remaining / 2);
  for (std::size_t i = 1; i < after.size(); ++i) CHECK(after[i].occurrence.seq_no == after[i - 1].occurrence.seq_no + 1);

  RevisionPolicy policy;
  CHECK_THROWS_AS(apply_revision(tl, rev(Actor::Participant, CollectionTarget{kPhase1},
                                         FrequencyOverride{{Frequency::Hour, 1, 1000}}, now), policy),
                  PolicyViolation);
  CHECK_THROWS_AS(apply_revision(tl, rev(Actor::Platform, CollectionTarget{kPhase1},
                                         FrequencyOverride{{Frequency::Minute, 10, 1000}}, now), policy),
                  PolicyViolation);
  CHECK_NOTHROW(apply_revision(tl, rev(Actor::Platform, CollectionTarget{kPhase1},
                                       FrequencyOverride{{Frequency::Hour, 2, 1000}}, now), policy));
}

TEST_CASE("replaying the audit reproduces the timeline") {
  auto plan = diary_plan();
  auto compiled = compile_one(plan, "p1");
  std::mt19937_64 rng(5);
  RevisionPolicy policy;
  auto tl = compiled;
  int applied = 0, rejected = 0;
  Instant now = day0();
  for (int i = 0; i < 200; ++i) {
    now += Duration{std::int64_t(rng() % (3 * 3600 * 1000))};
    auto actor = static_cast<Actor>(rng() % 3);
    auto seq = std::uint64_t(rng() % 700);
    Target target = OccurrenceTarget{rng() % 2 ? kPhase1 : kPhase2, seq};
    if (rng() % 5 == 0) target = SpanTarget{now, now + 6h, SourceKind::Question};
    Change change = Cancel{};
    switch (rng() % 4) {
    case 0: change = Shift{Duration{std::int64_t(rng() % 7200000) - 3600000}}; break;
    case 1: change = Cancel{}; break;
    case 2: change = Reinstate{}; break;
    case 3:
      target = CollectionTarget{rng() % 2 ? kPhase1 : kPhase2};
      change = FrequencyOverride{{Frequency::Hour, 1 + rng() % 3, 500}};
      break;
    }
    try {
      tl = apply_revision(tl, {actor, "p1", target, change, now}, policy);
      ++applied;
    } catch (const Error&) {
      ++rejected;
    }
  }
  CHECK(applied > 20);
  CHECK(rejected > 20);
  CHECK(replay(compiled, tl.audit) == tl);
}

TEST_CASE("revisions address one participant") {
  auto tl = compile_one(diary_plan(), "p1");
  Revision r{Actor::Participant, "p2", OccurrenceTarget{kPhase1, 3}, Cancel{}, day0()};
  CHECK_THROWS_AS(apply_revision(tl, r, {}), ValidationError);
  r.participant.clear();
  CHECK_THROWS_AS(apply_revision(tl, r, {}), ValidationError);
  r.actor = Actor::Researcher;
  CHECK_NOTHROW(apply_revision(tl, r, {}));
}

TEST_CASE("next_due") {
  auto tl = compile_one(diary_plan(), "p1");
  auto first = tl.entries.front().occurrence;
  CHECK(next_due(tl, day0() - kDay) == first);
  CHECK_FALSE(next_due(tl, day0() + 60 * kDay));
  auto linear = [&](Instant now) -> std::optional<Occurrence> {
    for (const auto& e : tl.entries)
      if (!e.cancelled && e.occurrence.scheduled_at >= now) return e.occurrence;
    return std::nullopt;
  };
  std::mt19937_64 rng(1);
  for (int i = 0; i < 500; ++i) {
    auto now = day0() + Duration{std::int64_t(rng() % (30LL * 86400000))};
    CHECK(next_due(tl, now) == linear(now));
  }
}

TEST_CASE("exports") {
  auto plan = diary_plan();
  auto tl = compile_one(plan, "p1");
  auto records = export_records(tl);
  CHECK(std::count(records.begin(), records.end(), '\n') == std::ptrdiff_t(tl.entries.size()));
  CHECK(records.starts_with("{\"participant\":\"p1\",\"source\":\"2/1/S1\",\"seq\":0,"));
  auto vevents = export_vevents(tl, plan);
  std::size_t n = 0;
  for (std::size_t p = vevents.find("BEGIN:VEVENT"); p != std::string::npos; p = vevents.find("BEGIN:VEVENT", p + 1)) ++n;
  CHECK(n == tl.entries.size());
  CHECK(vevents.find("SUMMARY:What are you doing?") != std::string::npos);
}

}
