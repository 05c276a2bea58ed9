#include <doctest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "ilog/catalog.hpp"
#include "ilog/errors.hpp"
#include "ilog/predictor.hpp"

using namespace ilog;
using namespace ilog::predict;
using namespace std::chrono_literals;
using sim::Event;
using sim::EventKind;
using sim::EventLog;

namespace {

Instant day0() { return make_instant(2020, 11, 2); }  // a Monday

schedule::SourceRef question_ref(cal::Id cid) { return {2, 1, cid, schedule::SourceKind::Question}; }

Event event(const std::string& pid, EventKind kind, Instant at, cal::Id cid, std::uint64_t seq,
            std::optional<std::string> value = {}) {
  Event e;
  e.participant = pid;
  e.kind = kind;
  e.at = at;
  e.source = question_ref(cid);
  e.seq_no = seq;
  e.value = std::move(value);
  return e;
}

// Generated and delivered at `at`, answered after `answer` (or missed).
void lifecycle(EventLog& log, const std::string& pid, cal::Id cid, std::uint64_t seq, Instant at,
               std::optional<Duration> answer, std::string value = "", std::optional<bool> correct = {}) {
  log.push_back(event(pid, EventKind::QuestionGenerated, at, cid, seq));
  log.push_back(event(pid, EventKind::QuestionDelivered, at, cid, seq));
  if (!answer) {
    log.push_back(event(pid, EventKind::Missed, at + 30min, cid, seq));
    return;
  }
  log.push_back(event(pid, EventKind::AnswerStarted, at + *answer / 2, cid, seq));
  auto stored = event(pid, EventKind::AnswerStored, at + *answer, cid, seq, value);
  stored.correct = correct;
  log.push_back(stored);
}

// Independent restatement of the metric definitions.
struct OracleMetrics {
  double accuracy, kappa, precision, recall, f1;
};
OracleMetrics oracle(const Confusion& c) {
  double tn = double(c.m[0][0]), fp = double(c.m[0][1]), fn = double(c.m[1][0]), tp = double(c.m[1][1]);
  double n = tn + fp + fn + tp;
  double precision = tp + fp == 0 ? 0 : tp / (tp + fp);
  double recall = tp + fn == 0 ? 0 : tp / (tp + fn);
  // Two-class kappa in closed form.
  double denom = (tp + fp) * (fp + tn) + (tp + fn) * (fn + tn);
  double kappa = denom == 0 ? 0 : 2 * (tp * tn - fn * fp) / denom;
  double f1 = 2 * tp + fp + fn == 0 ? 0 : 2 * tp / (2 * tp + fp + fn);
  return {(tp + tn) / n, kappa, precision, recall, f1};
}

void check_identities(const EvalReport& r) {
  auto o = oracle(r.confusion);
  CHECK(r.confusion.total() == std::int64_t(r.test_rows));
  CHECK(r.metrics.accuracy == doctest::Approx(o.accuracy).epsilon(1e-9));
  CHECK(std::abs(r.metrics.kappa - o.kappa) <= 1e-9);
  CHECK(std::abs(r.metrics.precision - o.precision) <= 1e-9);
  CHECK(std::abs(r.metrics.recall - o.recall) <= 1e-9);
  CHECK(std::abs(r.metrics.f1 - o.f1) <= 1e-9);
}

std::vector<context::ParticipantProfile> cohort(int n) {
  std::vector<context::ParticipantProfile> out;
  for (int i = 0; i < n; ++i) out.push_back({"p" + std::to_string(i), i % 2 ? "M" : "F", "BSc", "Eng", "UTC"});
  return out;
}

// Answers arrive within a minute in the morning and never otherwise.
struct MorningWorld {
  cal::ExperimentPlan plan;
  std::map<std::string, schedule::Timeline> timelines;
  sim::SimulationInput input;
  EventLog log;
  std::vector<FeatureVector> rows;

  explicit MorningWorld(int participants, int days = 7) {
    plan = catalog::time_diary_plan(day0(), "cohort", 10min, days, {cal::Category::WA, cal::Category::WE, cal::Category::WO});
    auto profiles = cohort(participants);
    timelines = schedule::compile(plan, profiles);
    input.plan = &plan;
    input.timelines = &timelines;
    input.profiles = profiles;
    input.model.seed = 12;
    input.model.fallback = {0.0, {std::log(60.0), 0}, {std::log(30.0), 0}, 1.0};
    sim::CellRule morning;
    morning.period = DayPeriod::Morning;
    morning.cell = {1.0, {std::log(60.0), 0}, {std::log(30.0), 0}, 1.0};
    input.model.rules.push_back(morning);
    for (const auto& p : profiles)
      input.ground_truth[p.id] = sim::generate_ground_truth(p.id, day0(), day0() + (days + 2) * kDay, 5);
    log = sim::run_simulation(input);
    rows = extract_all(log, plan, profiles);
  }
};

const MorningWorld& morning_world() {
  static const MorningWorld w(5);
  return w;
}

std::vector<FeatureVector> random_rows(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::span<const std::string_view> xs) { return std::string(xs[rng() % xs.size()]); };
  std::vector<FeatureVector> rows;
  for (std::size_t i = 0; i < n; ++i) {
    FeatureVector f;
    f.participant = "p" + std::to_string(i % 10);
    f.source = question_ref(1);
    f.seq_no = i;
    f.delivered = day0() + std::int64_t(i) * 30min;
    f.weekday = int(rng() % 7) + 1;
    f.period = static_cast<DayPeriod>(rng() % 4);
    f.we = pick(catalog::locations());
    f.wa = pick(catalog::activities());
    f.wo = pick(catalog::companions());
    f.gender = rng() % 2 ? "F" : "M";
    f.label = rng() % 2;
    rows.push_back(f);
  }
  return rows;
}

} // namespace

TEST_SUITE("predictor") {

TEST_CASE("label boundary") {
  sim::TimingMetrics t;
  t.delivered = day0();
  CHECK_FALSE(label_quality(t));
  t.stored = day0() + 29min;
  CHECK(label_quality(t));
  t.stored = day0() + 30min;
  CHECK(label_quality(t));
  t.stored = day0() + 30min + 1ms;
  CHECK_FALSE(label_quality(t));
  CHECK(label_quality(t, 31min));
  t.delivered.reset();
  CHECK_FALSE(label_quality(t));
}

TEST_CASE("feature extraction from a hand-written log") {
  auto plan = catalog::time_diary_plan(day0());
  context::ParticipantProfile who{"ana", "X", "", "Eng", "UTC"};
  EventLog log;
  auto t0 = day0() + 8h;
  lifecycle(log, "ana", 2, 0, t0, 2min, "Gym", true);                  // WE
  lifecycle(log, "ana", 1, 0, t0, 29min, "Sport/exercise", false);     // WA
  lifecycle(log, "ana", 3, 0, t0, 1min, "Martians");                   // WO, not a catalog value
  lifecycle(log, "ana", 1, 1, t0 + 30min, 30min, "Sport/exercise");   // WA, exactly 30 min
  lifecycle(log, "ana", 2, 1, t0 + 30min, std::nullopt);              // WE, missed
  lifecycle(log, "bob", 2, 0, t0, 1min, "Workplace");                  // someone else
  std::sort(log.begin(), log.end(), sim::event_less);

  FeatureOptions opt;
  opt.vocabulary.genders = {"F", "M"};
  auto rows = extract_features(log, plan, who, opt);
  REQUIRE(rows.size() == 5);
  for (const auto& r : rows) {
    CHECK(r.participant == "ana");
    CHECK(r.weekday == 1);
    CHECK(r.period == DayPeriod::Morning);
    CHECK(r.gender == kUnknown);  // outside the declared vocabulary
    CHECK(r.degree == kUnknown);  // empty
    CHECK(r.department == "Eng");  // no vocabulary declared: accepted
  }
  // Cold start: nothing was stored at or before the first delivery.
  for (int i = 0; i < 3; ++i) {
    CHECK(rows[std::size_t(i)].we == kUnknown);
    CHECK(rows[std::size_t(i)].wa == kUnknown);
  }
  CHECK(rows[0].source == question_ref(1));
  CHECK(rows[0].label);
  CHECK(rows[0].correct == std::optional<bool>(false));
  CHECK(rows[1].source == question_ref(2));
  CHECK(rows[1].correct == std::optional<bool>(true));
  CHECK(rows[2].correct == std::nullopt);

  const auto& later = rows[3];  // WA seq 1 at 08:30
  CHECK(later.source == question_ref(1));
  CHECK(later.we == "Gym");
  CHECK(later.wa == "Sport/exercise");  // stored at 08:29
  CHECK(later.wo == kUnknown);          // "Martians"
  CHECK(later.label);                   // exactly 30 minutes
  CHECK_FALSE(rows[4].label);           // missed

  auto csv = features_csv(rows);
  CHECK(csv.rfind("participant,source,seq,delivered,weekday,day_period,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
}

TEST_CASE("weekday and day period use local delivery time") {
  auto plan = catalog::time_diary_plan(day0());
  auto sunday = make_instant(2020, 11, 1);
  EventLog log;
  lifecycle(log, "kei", 1, 0, sunday + 21h, 1min, "Eating");         // Monday 06:00 in Tokyo
  lifecycle(log, "kei", 1, 1, sunday + 20h + 59min, 1min, "Eating");  // Monday 05:59
  lifecycle(log, "kei", 1, 2, sunday + 14h + 59min, 1min, "Eating");  // Sunday 23:59
  std::sort(log.begin(), log.end(), sim::event_less);
  auto rows = extract_features(log, plan, {"kei", "F", "BSc", "Eng", "Asia/Tokyo"});
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].weekday == 7);
  CHECK(rows[0].period == DayPeriod::Evening);
  CHECK(rows[1].weekday == 1);
  CHECK(rows[1].period == DayPeriod::Night);
  CHECK(rows[2].weekday == 1);
  CHECK(rows[2].period == DayPeriod::Morning);

  auto utc = extract_features(log, plan, {"kei", "F", "BSc", "Eng", "UTC"});
  CHECK(utc[2].weekday == 7);
  CHECK(utc[2].period == DayPeriod::Evening);
}

TEST_CASE("encoder") {
  auto rows = random_rows(200, 3);
  Encoder enc(rows, false);
  // 7 weekdays + 4 periods + 27 places + 35 activities + 9 companions + 3 genders + 1 + 1
  CHECK(enc.width() == 7 + 4 + 27 + 35 + 9 + 3 + 1 + 1);
  CHECK(enc.columns()[enc.weekday_column(3)] == "weekday=3");
  CHECK(enc.columns()[enc.period_column(DayPeriod::Night)] == "day_period=Night");
  CHECK(Encoder(rows, true).width() == enc.width() + 6);

  auto shuffled = rows;
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(1));
  CHECK(Encoder(shuffled, false).columns() == enc.columns());

  std::vector<std::uint8_t> row(enc.width());
  for (const auto& f : rows) {
    enc.encode(f, row.data());
    CHECK(std::accumulate(row.begin(), row.end(), 0) == 8);  // one hot per field
  }
  std::stringstream io;
  enc.save(io);
  auto back = Encoder::load(io);
  CHECK(back.columns() == enc.columns());
}

TEST_CASE("metrics from a confusion matrix") {
  Confusion c;
  c.m = {{{40, 10}, {10, 40}}};
  auto m = metrics_from(c);
  CHECK(m.accuracy == doctest::Approx(0.8));
  CHECK(m.kappa == doctest::Approx(0.6));
  CHECK(m.precision == doctest::Approx(0.8));
  CHECK(m.recall == doctest::Approx(0.8));
  CHECK(m.f1 == doctest::Approx(0.8));

  std::mt19937_64 rng(8);
  for (int i = 0; i < 2000; ++i) {
    Confusion r;
    for (auto& row : r.m)
      for (auto& x : row) x = std::int64_t(rng() % 4 == 0 ? 0 : rng() % 200);
    if (r.total() == 0) continue;
    auto got = metrics_from(r);
    auto want = oracle(r);
    CHECK(std::abs(got.accuracy - want.accuracy) <= 1e-9);
    CHECK(std::abs(got.kappa - want.kappa) <= 1e-9);
    CHECK(std::abs(got.precision - want.precision) <= 1e-9);
    CHECK(std::abs(got.recall - want.recall) <= 1e-9);
    CHECK(std::abs(got.f1 - want.f1) <= 1e-9);
    CHECK(got.kappa >= -1);
    CHECK(got.kappa <= 1);
  }
  Confusion all_low;
  all_low.m = {{{10, 0}, {0, 0}}};
  auto z = metrics_from(all_low);
  CHECK(z.accuracy == 1);
  CHECK(z.kappa == 0);
  CHECK(z.precision == 0);
  CHECK(z.f1 == 0);
}

TEST_CASE("fold assignment") {
  std::vector<std::uint64_t> ids;
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1003; ++i) ids.push_back(rng());
  auto folds = assign_folds(ids, 7);
  std::array<int, 5> sizes{};
  for (int f : folds) {
    REQUIRE(f >= 0);
    REQUIRE(f < 5);
    ++sizes[std::size_t(f)];
  }
  CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);
  CHECK(std::accumulate(sizes.begin(), sizes.end(), 0) == 1003);

  // Same fold for the same id, whatever the order.
  std::vector<std::size_t> perm(ids.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::uint64_t> shuffled;
  for (auto i : perm) shuffled.push_back(ids[i]);
  auto again = assign_folds(shuffled, 7);
  for (std::size_t k = 0; k < perm.size(); ++k) CHECK(again[k] == folds[perm[k]]);
  CHECK(assign_folds(ids, 8) != folds);
  CHECK_THROWS_AS(assign_folds(ids, 7, 1), ValidationError);
}

TEST_CASE("planted morning rule") {
  const auto& w = morning_world();
  REQUIRE(w.rows.size() > 3000);
  // Oracle: the rule itself, and the majority label per day period.
  std::map<DayPeriod, std::array<int, 2>> by_period;
  for (const auto& r : w.rows) {
    CHECK(r.label == (r.period == DayPeriod::Morning));
    ++by_period[r.period][r.label];
  }
  for (const auto& [p, counts] : by_period) CHECK(std::min(counts[0], counts[1]) == 0);

  auto data = make_dataset(w.rows);
  for (auto kind : kAllClassifiers) {
    CAPTURE(to_string(kind));
    auto report = train_eval(data, {kind, {}, 3}, FiveFoldCV{});
    CHECK(report.metrics.accuracy >= 0.95);
    CHECK(report.folds.size() == 5);
    CHECK(report.test_rows == w.rows.size());
    CHECK(report.train_rows == 4 * w.rows.size());
    check_identities(report);
  }
}

TEST_CASE("random labels carry no signal") {
  auto data = make_dataset(random_rows(5000, 11));
  for (auto kind : kAllClassifiers) {
    CAPTURE(to_string(kind));
    auto report = train_eval(data, {kind, {}, 5}, FiveFoldCV{});
    CHECK(std::abs(report.metrics.kappa) <= 0.1);
    check_identities(report);
  }
}

TEST_CASE("determinism and serial reference") {
  auto rows = random_rows(1500, 21);
  for (auto& r : rows) r.label = r.period == DayPeriod::Evening || r.wo == "Alone";
  auto data = make_dataset(rows);
  for (auto kind : kAllClassifiers) {
    CAPTURE(to_string(kind));
    ClassifierSpec spec{kind, {}, 9};
    auto a = train_eval(data, spec, FiveFoldCV{});
    CHECK(a == train_eval(data, spec, FiveFoldCV{}));
    CHECK(a == train_eval_serial(data, spec, FiveFoldCV{}));
  }

  // Permuting the input rows permutes nothing in the result.
  auto shuffled = rows;
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(4));
  auto other = make_dataset(shuffled);
  for (auto kind : kAllClassifiers) {
    CAPTURE(to_string(kind));
    CHECK(train_eval(data, {kind, {}, 9}, FiveFoldCV{}) == train_eval(other, {kind, {}, 9}, FiveFoldCV{}));
  }

  auto knn = make_classifier({ClassifierKind::KNearestNeighbors, {{"k", 7}}, 0});
  knn->fit(data.x, data.y);
  CHECK(knn->score_all(data.x) == knn_score_serial(*knn, data.x));
  auto lr = make_classifier({ClassifierKind::LogisticRegression, {}, 0});
  CHECK_THROWS_AS(knn_score_serial(*lr, data.x), ValidationError);
}

TEST_CASE("classifier specs and degenerate data") {
  CHECK_THROWS_AS(make_classifier({ClassifierKind::KNearestNeighbors, {{"trees", 3}}, 0}), ValidationError);
  CHECK_THROWS_AS(make_classifier({ClassifierKind::KNearestNeighbors, {{"k", 0}}, 0}), ValidationError);
  CHECK(parse_classifier("rf") == ClassifierKind::RandomForest);
  CHECK(parse_classifier("LinearSVM") == ClassifierKind::LinearSVM);
  CHECK_FALSE(parse_classifier("xgboost"));
  for (auto kind : kAllClassifiers) CHECK(parse_classifier(to_string(kind)) == kind);

  auto rows = random_rows(100, 1);
  for (auto& r : rows) r.label = true;
  auto data = make_dataset(rows);
  for (auto kind : kAllClassifiers) {
    CAPTURE(to_string(kind));
    auto m = make_classifier({kind, {}, 0});
    CHECK_THROWS_AS(m->fit(data.x, data.y), DegenerateData);
  }
}

TEST_CASE("model files round-trip") {
  auto rows = random_rows(600, 31);
  for (auto& r : rows) r.label = r.period == DayPeriod::Morning;
  auto data = make_dataset(rows);
  for (auto kind : kAllClassifiers) {
    CAPTURE(to_string(kind));
    auto m = make_classifier({kind, {}, 2});
    m->fit(data.x, data.y);
    auto text = save_model(data.encoder, *m);
    auto back = load_model(text);
    CHECK(back.model->kind() == kind);
    CHECK(back.encoder.columns() == data.encoder.columns());
    CHECK(back.model->score_all(data.x) == m->score_all(data.x));
    CHECK(save_model(back.encoder, *back.model) == text);
  }
  CHECK_THROWS_AS(load_model("ilog-model 2\nkind RandomForest\n"), SchemaError);
  CHECK_THROWS_AS(load_model("something else"), SchemaError);
  CHECK_THROWS_AS(load_model("ilog-model 1\nkind Perceptron\n"), SchemaError);
  auto m = make_classifier({ClassifierKind::LogisticRegression, {}, 0});
  m->fit(data.x, data.y);
  auto text = save_model(data.encoder, *m);
  CHECK_THROWS_AS(load_model(text.substr(0, text.size() / 2)), SchemaError);
}

TEST_CASE("per-participant protocol") {
  const auto& w = morning_world();
  auto data = make_dataset(w.rows);
  // Seven days of data: a three-day train span leaves four days to predict.
  auto r = train_eval(data, {ClassifierKind::RandomForest, {}, 1}, PerParticipantSplit{"p2", 3 * kDay, 14 * kDay});
  CHECK(r.folds.size() == 1);
  CHECK(r.split == "participant p2: 3d train / 14d test");
  CHECK(r.metrics.accuracy >= 0.95);
  check_identities(r);
  std::size_t own = std::count(data.participants.begin(), data.participants.end(), "p2");
  CHECK(r.train_rows + r.test_rows == own);

  CHECK_THROWS_AS(train_eval(data, {ClassifierKind::RandomForest, {}, 1}, PerParticipantSplit{"nobody"}),
                  DegenerateData);
  // Fourteen training days cover everything: nothing left to test on.
  CHECK_THROWS_AS(train_eval(data, {ClassifierKind::RandomForest, {}, 1}, PerParticipantSplit{"p2"}), DegenerateData);

  auto all = evaluate_participants(data, {ClassifierKind::LogisticRegression, {}, 1}, 3 * kDay, 4 * kDay);
  REQUIRE(all.size() == 5);
  for (const auto& p : all) {
    CAPTURE(p.participant);
    REQUIRE(p.report);
    CHECK(p.report->metrics.accuracy >= 0.95);
    CHECK(*p.report == train_eval_serial(data, {ClassifierKind::LogisticRegression, {}, 1},
                                         PerParticipantSplit{p.participant, 3 * kDay, 4 * kDay}));
  }
  auto none = evaluate_participants(data, {ClassifierKind::LogisticRegression, {}, 1});
  for (const auto& p : none) {
    CHECK_FALSE(p.report);
    CHECK_FALSE(p.skipped.empty());
  }
  auto j = report_to_json(r);
  CHECK(j["classifier"] == "RandomForest");
  CHECK(j["confusion"].size() == 2);
}

TEST_CASE("window recommendations") {
  const auto& w = morning_world();
  auto data = make_dataset(w.rows);
  auto rec = recommend_windows(data, "p1", {ClassifierKind::RandomForest, {}, 1});
  REQUIRE(rec.ranked.size() == 28);
  CHECK_FALSE(rec.no_preference);
  for (std::size_t i = 0; i < 7; ++i) CHECK(rec.ranked[i].period == DayPeriod::Morning);
  for (std::size_t i = 7; i < 28; ++i) CHECK(rec.ranked[i].period != DayPeriod::Morning);
  CHECK(rec.ranked.front().probability > rec.ranked.back().probability + 0.5);
  CHECK_THROWS_AS(recommend_windows(data, "nobody", {}), NotFound);

  // Labels follow the place only, over a balanced grid of cells.
  std::vector<FeatureVector> rows;
  std::uint64_t seq = 0;
  for (int wd = 1; wd <= 7; ++wd)
    for (int p = 0; p < 4; ++p)
      for (std::string place : {"Gym", "Park", "Workplace", "Bar/cafe"})
        for (int rep = 0; rep < 3; ++rep) {
          FeatureVector f;
          f.participant = "u";
          f.source = question_ref(1);
          f.seq_no = seq++;
          f.delivered = day0() + std::int64_t(seq) * 1min;
          f.weekday = wd;
          f.period = static_cast<DayPeriod>(p);
          f.we = place;
          f.label = place == "Gym" || place == "Park";
          rows.push_back(f);
        }
  auto flat = recommend_windows(make_dataset(rows), "u", {ClassifierKind::LogisticRegression, {}, 0});
  CHECK(flat.no_preference);

  for (auto& r : rows) r.label = true;
  auto constant = recommend_windows(make_dataset(rows), "u", {ClassifierKind::RandomForest, {}, 0});
  CHECK(constant.no_preference);
  CHECK(constant.ranked.front() == CellScore{1, DayPeriod::Morning, 1.0});
  auto j = recommendation_to_json(rec);
  CHECK(j["ranked"].size() == 28);
}

TEST_CASE("recommended shifts go through the revision policy") {
  auto plan = catalog::time_diary_plan(day0(), "cohort", 10min, 7);
  auto timeline = schedule::compile_one(plan, "p0");
  WindowRecommendation rec;
  rec.participant = "p0";
  for (int p = 0; p < 4; ++p)
    for (int wd = 1; wd <= 7; ++wd)
      rec.ranked.push_back({wd, static_cast<DayPeriod>(p), p == 0 ? 0.9 : 0.2});

  schedule::RevisionPolicy policy;  // platform shifts bounded to 30 minutes
  auto now = day0() + 8h;
  auto result = plan_revisions(rec, timeline, policy, "UTC", now, 1 * kDay);
  std::size_t applied = 0, rejected = 0;
  for (const auto& p : result.proposals) {
    CHECK(p.revision.actor == schedule::Actor::Platform);
    const auto& shift = std::get<schedule::Shift>(p.revision.change);
    if (p.applied) {
      ++applied;
      CHECK(std::chrono::abs(shift.delta) <= 30min);
      CHECK(p.reason.empty());
    } else {
      ++rejected;
      CHECK(std::chrono::abs(shift.delta) > 30min);
      CHECK_FALSE(p.reason.empty());
    }
  }
  // The four questions at 12:00 move back a minute and the four at 05:30 the
  // next morning move forward half an hour; everything else is out of reach.
  CHECK(applied == 8);
  CHECK(rejected > 100);
  CHECK(result.timeline.audit.size() == timeline.audit.size() + applied);
  std::size_t moved = 0;
  for (const auto& e : result.timeline.entries)
    moved += e.occurrence.scheduled_at == day0() + 11h + 59min || e.occurrence.scheduled_at == day0() + 30h;
  CHECK(moved >= 8);

  rec.no_preference = true;
  CHECK(plan_revisions(rec, timeline, policy, "UTC", now).proposals.empty());
}

}
