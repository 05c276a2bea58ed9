// Serial reference vs OpenMP kernel, same inputs. Run with OMP_NUM_THREADS to vary threads.

#include <benchmark/benchmark.h>

#include <cmath>

#include "ilog/catalog.hpp"
#include "ilog/predictor.hpp"
#include "ilog/sim.hpp"

using namespace ilog;
using namespace std::chrono_literals;

namespace {

const Instant kStart = make_instant(2020, 11, 2);

struct Cohort {
  cal::ExperimentPlan plan;
  std::vector<context::ParticipantProfile> profiles;
  std::map<std::string, schedule::Timeline> timelines;
  sim::SimulationInput input;

  explicit Cohort(int participants) {
    plan = catalog::time_diary_plan(kStart, "bench", 10min, 28, {cal::Category::WE, cal::Category::WA});
    for (int i = 0; i < participants; ++i)
      profiles.push_back({"p" + std::to_string(i), i % 2 ? "M" : "F", "BSc", "Eng", "UTC"});
    timelines = schedule::compile(plan, profiles);
    input.plan = &plan;
    input.timelines = &timelines;
    input.profiles = profiles;
    input.model = sim::location_model(7);
    for (const auto& p : profiles)
      input.ground_truth[p.id] = sim::generate_ground_truth(p.id, kStart, kStart + 30 * kDay, 11);
  }
};

const Cohort& cohort() {
  static Cohort c(32);
  return c;
}

const predict::Dataset& dataset() {
  static predict::Dataset d = [] {
    const auto& c = cohort();
    return predict::make_dataset(predict::extract_all(sim::run_simulation(c.input), c.plan, c.profiles));
  }();
  return d;
}

void BM_SimulateSerial(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(sim::run_simulation_serial(cohort().input));
}
void BM_SimulateParallel(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(sim::run_simulation(cohort().input));
}

const predict::ClassifierSpec kForest{predict::ClassifierKind::RandomForest, {{"trees", 30}}, 1};

void BM_FiveFoldSerial(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(predict::train_eval_serial(dataset(), kForest, predict::FiveFoldCV{}));
}
void BM_FiveFoldParallel(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(predict::train_eval(dataset(), kForest, predict::FiveFoldCV{}));
}

const predict::Classifier& knn() {
  static auto model = [] {
    auto m = predict::make_classifier({predict::ClassifierKind::KNearestNeighbors, {{"k", 7}}, 0});
    m->fit(dataset().x, dataset().y);
    return m;
  }();
  return *model;
}

// Queries: the first 2000 rows, scored against the full training set.
const predict::Matrix& queries() {
  static predict::Matrix q = [] {
    const auto& x = dataset().x;
    predict::Matrix m{std::min<std::size_t>(2000, x.rows), x.cols, {}};
    m.data.assign(x.data.begin(), x.data.begin() + std::ptrdiff_t(m.rows * m.cols));
    return m;
  }();
  return q;
}

void BM_KnnScoreSerial(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(predict::knn_score_serial(knn(), queries()));
}
void BM_KnnScoreParallel(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(knn().score_all(queries()));
}

} // namespace

BENCHMARK(BM_SimulateSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SimulateParallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_FiveFoldSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FiveFoldParallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_KnnScoreSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_KnnScoreParallel)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
