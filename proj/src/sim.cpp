#include "ilog/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "ilog/catalog.hpp"
#include "ilog/digest.hpp"
#include "ilog/errors.hpp"
#include "ilog/tz.hpp"

namespace ilog::sim {

namespace {

constexpr std::array<std::string_view, 6> kKindNames{
    "QuestionGenerated", "QuestionDelivered", "AnswerStarted", "AnswerStored", "Missed", "SensorReading"};

std::string key_text(const OccurrenceKey& k) {
  return k.participant + " " + schedule::to_string(k.source) + "#" + std::to_string(k.seq_no);
}

} // namespace

std::string_view to_string(EventKind k) { return kKindNames[static_cast<std::size_t>(k)]; }

std::optional<EventKind> parse_event_kind(std::string_view s) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i)
    if (kKindNames[i] == s) return static_cast<EventKind>(i);
  return std::nullopt;
}

std::string_view to_string(QuestionKind k) { return k == QuestionKind::TimeDiary ? "TimeDiary" : "Task"; }

bool event_less(const Event& a, const Event& b) {
  return std::tie(a.at, a.participant, a.kind, a.source, a.seq_no, a.sensor, a.value) <
         std::tie(b.at, b.participant, b.kind, b.source, b.seq_no, b.sensor, b.value);
}

std::optional<OccurrenceKey> key_of(const Event& e) {
  if (e.is_reading() || !e.seq_no) return std::nullopt;
  return OccurrenceKey{e.participant, e.source, *e.seq_no};
}

// Timing ---------------------------------------------------------------------

namespace {

struct Lifecycle {
  TimingMetrics m;
  int last_stage = -1;
  std::optional<Instant> last_at;
};

void feed(Lifecycle& lc, const Event& e, const OccurrenceKey& key) {
  auto fail = [&](const std::string& why) { throw LifecycleError(key_text(key) + ": " + why); };
  int stage = static_cast<int>(e.kind);
  auto& m = lc.m;
  std::optional<Instant>* slot = nullptr;
  switch (e.kind) {
  case EventKind::QuestionGenerated: slot = &m.generated; break;
  case EventKind::QuestionDelivered: slot = &m.delivered; break;
  case EventKind::AnswerStarted: slot = &m.started; break;
  case EventKind::AnswerStored: slot = &m.stored; break;
  case EventKind::Missed: slot = &m.missed; break;
  case EventKind::SensorReading: return;
  }
  if (*slot) fail(std::string(to_string(e.kind)) + " appears twice");
  if (e.kind == EventKind::Missed) {
    if (m.stored) fail("Missed after AnswerStored");
  } else {
    if (m.missed) fail(std::string(to_string(e.kind)) + " after Missed");
    if (stage < lc.last_stage) fail(std::string(to_string(e.kind)) + " out of lifecycle order");
    lc.last_stage = stage;
  }
  // Missed closes the occurrence at the window end, which can fall before a
  // late delivery only through malformed input.
  if (lc.last_at && e.at < *lc.last_at) fail(std::string(to_string(e.kind)) + " is earlier than the previous event");
  lc.last_at = e.at;
  *slot = e.at;
}

void finish(TimingMetrics& m, const OccurrenceKey& key) {
  auto check = [&](const std::optional<Instant>& a, const std::optional<Instant>& b, const char* what) {
    if (a && b && *b < *a) throw LifecycleError(key_text(key) + ": " + what);
  };
  check(m.generated, m.delivered, "delivered before generated");
  check(m.delivered, m.started, "answer started before delivery");
  check(m.started, m.stored, "answer stored before it started");
  if ((m.started || m.stored) && !m.delivered) throw LifecycleError(key_text(key) + ": answer without delivery");
  if (m.stored && !m.started) throw LifecycleError(key_text(key) + ": answer stored without AnswerStarted");
  if (m.delivered && m.started) m.reaction = *m.started - *m.delivered;
  if (m.started && m.stored) m.completion = *m.stored - *m.started;
  if (m.generated && m.stored) m.delay = *m.stored - *m.generated;
}

} // namespace

TimingMetrics derive_timing(const EventLog& log, const OccurrenceKey& key) {
  Lifecycle lc;
  for (const auto& e : log) {
    auto k = key_of(e);
    if (k && *k == key) feed(lc, e, key);
  }
  if (!lc.m.delivered) throw LifecycleError(key_text(key) + ": no QuestionDelivered event");
  finish(lc.m, key);
  return lc.m;
}

std::map<OccurrenceKey, TimingMetrics> derive_timings(const EventLog& log, bool strict) {
  std::map<OccurrenceKey, Lifecycle> acc;
  std::set<OccurrenceKey> broken;
  for (const auto& e : log) {
    auto k = key_of(e);
    if (!k || broken.contains(*k)) continue;
    try {
      feed(acc[*k], e, *k);
    } catch (const LifecycleError&) {
      if (strict) throw;
      broken.insert(*k);
    }
  }
  std::map<OccurrenceKey, TimingMetrics> out;
  for (auto& [k, lc] : acc) {
    if (broken.contains(k)) continue;
    try {
      finish(lc.m, k);
    } catch (const LifecycleError&) {
      if (strict) throw;
      continue;
    }
    out.emplace(k, lc.m);
  }
  return out;
}

void check_lifecycle(const EventLog& log) { (void)derive_timings(log); }

// Random sampling --------------------------------------------------------------
// Hand-rolled so logs are identical across standard libraries.

double Rng::uniform() { return double(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) { return n == 0 ? 0 : std::uint64_t(uniform() * double(n)) % n; }

Duration LogNormal::sample(Rng& rng) const {
  double z = rng.normal();
  double seconds = std::exp(mu + sigma * z);
  seconds = std::min(seconds, 30.0 * 86400.0);
  return Duration{std::llround(seconds * 1000.0)};
}

namespace {

double phi(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// P(R + C <= t) for independent log-normal R and C, t in seconds.
double sum_below(const LogNormal& r, const LogNormal& c, double t) {
  auto reaction_below = [&](double budget) {
    if (budget <= 0) return 0.0;
    if (r.sigma == 0) return std::exp(r.mu) <= budget ? 1.0 : 0.0;
    return phi((std::log(budget) - r.mu) / r.sigma);
  };
  if (c.sigma == 0) return reaction_below(t - std::exp(c.mu));
  constexpr int kSteps = 1600;
  constexpr double kLo = -8, kHi = 8;
  double h = (kHi - kLo) / kSteps, total = 0;
  for (int i = 0; i <= kSteps; ++i) {
    double z = kLo + i * h;
    double w = std::exp(-0.5 * z * z) / std::sqrt(2 * std::numbers::pi) * ((i == 0 || i == kSteps) ? 0.5 : 1.0);
    total += w * reaction_below(t - std::exp(c.mu + c.sigma * z));
  }
  return total * h;
}

} // namespace

double high_quality_probability(const ResponseCell& cell, Duration horizon) {
  double t = std::chrono::duration<double>(horizon).count();
  return cell.p_answer * sum_below(cell.reaction, cell.completion, t);
}

ResponseCell calibrated_cell(double p_high, double p_correct, double p_answer, double reaction_sigma) {
  if (p_high < 0 || p_high > 1 || p_correct < 0 || p_correct > 1 || p_answer < 0 || p_answer > 1)
    throw ValidationError("model", "probabilities must lie in [0, 1]");
  if (p_high > p_answer)
    throw ValidationError("model", "high-quality rate " + std::to_string(p_high) + " exceeds answer rate " +
                                       std::to_string(p_answer));
  ResponseCell cell;
  cell.p_answer = p_answer;
  cell.p_correct = p_correct;
  cell.reaction.sigma = reaction_sigma;
  if (p_high == 0) {
    cell.p_answer = 0;
    return cell;
  }
  double lo = -5, hi = 20;
  for (int i = 0; i < 80; ++i) {
    cell.reaction.mu = 0.5 * (lo + hi);
    if (high_quality_probability(cell) > p_high)
      lo = cell.reaction.mu;
    else
      hi = cell.reaction.mu;
  }
  cell.reaction.mu = 0.5 * (lo + hi);
  return cell;
}

const ResponseCell& BehaviorModel::resolve(std::string_view location, std::string_view companion, int weekday,
                                           DayPeriod period) const {
  for (const auto& r : rules) {
    if (r.location && *r.location != location) continue;
    if (r.companion && *r.companion != companion) continue;
    if (r.weekday && *r.weekday != weekday) continue;
    if (r.period && *r.period != period) continue;
    return r.cell;
  }
  return fallback;
}

void check_model(const BehaviorModel& m) {
  auto prob = [](double p, const std::string& what) {
    if (!(p >= 0 && p <= 1)) throw ValidationError("model", what + " must lie in [0, 1]");
  };
  auto cell = [&](const ResponseCell& c, const std::string& where) {
    prob(c.p_answer, where + ".p_answer");
    prob(c.p_correct, where + ".p_correct");
    if (!(c.reaction.sigma >= 0) || !(c.completion.sigma >= 0))
      throw ValidationError("model", where + ": sigma must not be negative");
  };
  prob(m.p_delivery_failure, "p_delivery_failure");
  if (m.delivery_latency < Duration::zero()) throw ValidationError("model", "delivery latency must not be negative");
  cell(m.fallback, "fallback");
  for (std::size_t i = 0; i < m.rules.size(); ++i) {
    cell(m.rules[i].cell, "rules[" + std::to_string(i) + "]");
    if (m.rules[i].weekday && (*m.rules[i].weekday < 1 || *m.rules[i].weekday > 7))
      throw ValidationError("model", "rules[" + std::to_string(i) + "].weekday must be 1-7");
  }
}

const std::vector<std::pair<std::string, double>>& location_rates() {
  static const std::vector<std::pair<std::string, double>> rates{
      {"Home Apartment/room", 0.4530},  {"Home Relatives", 0.4147},
      {"House Friends/others", 0.2976}, {"University Classroom/library", 0.5202},
      {"University Canteen", 0.4000},   {"Restaurant/pub", 0.2887},
      {"In the street", 0.3958},        {"Another indoor place", 0.2693},
      {"Another outdoor place", 0.2868},
  };
  return rates;
}

BehaviorModel location_model(std::uint64_t seed) {
  BehaviorModel m;
  m.seed = seed;
  m.fallback = calibrated_cell(0.40, 0.40);
  for (const auto& [place, rate] : location_rates()) {
    CellRule r;
    r.location = place;
    r.cell = calibrated_cell(rate, rate);
    m.rules.push_back(r);
  }
  return m;
}

namespace {

nlohmann::ordered_json cell_to_json(const ResponseCell& c) {
  return {{"p_answer", c.p_answer},
          {"reaction", {{"mu", c.reaction.mu}, {"sigma", c.reaction.sigma}}},
          {"completion", {{"mu", c.completion.mu}, {"sigma", c.completion.sigma}}},
          {"p_correct", c.p_correct}};
}

ResponseCell cell_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("model", "cell must be an object");
  if (j.contains("p_high"))
    return calibrated_cell(j.at("p_high").get<double>(), j.value("p_correct", 0.8), j.value("p_answer", 0.9),
                           j.value("reaction_sigma", 1.0));
  ResponseCell c;
  c.p_answer = j.value("p_answer", c.p_answer);
  c.p_correct = j.value("p_correct", c.p_correct);
  if (j.contains("reaction")) c.reaction = {j["reaction"].at("mu").get<double>(), j["reaction"].at("sigma").get<double>()};
  if (j.contains("completion"))
    c.completion = {j["completion"].at("mu").get<double>(), j["completion"].at("sigma").get<double>()};
  return c;
}

} // namespace

nlohmann::ordered_json model_to_json(const BehaviorModel& m) {
  nlohmann::ordered_json j{{"seed", m.seed},
                           {"delivery_latency_ms", m.delivery_latency.count()},
                           {"p_delivery_failure", m.p_delivery_failure},
                           {"fallback", cell_to_json(m.fallback)},
                           {"rules", nlohmann::ordered_json::array()}};
  for (const auto& r : m.rules) {
    nlohmann::ordered_json rj;
    if (r.location) rj["location"] = *r.location;
    if (r.companion) rj["companion"] = *r.companion;
    if (r.weekday) rj["weekday"] = *r.weekday;
    if (r.period) rj["period"] = to_string(*r.period);
    rj["cell"] = cell_to_json(r.cell);
    j["rules"].push_back(rj);
  }
  return j;
}

BehaviorModel model_from_json(const nlohmann::json& j) {
  BehaviorModel m;
  try {
    m.seed = j.value("seed", std::uint64_t{0});
    m.delivery_latency = Duration{j.value("delivery_latency_ms", std::int64_t{5000})};
    m.p_delivery_failure = j.value("p_delivery_failure", 0.0);
    if (j.contains("fallback")) m.fallback = cell_from_json(j["fallback"]);
    for (const auto& rj : j.value("rules", nlohmann::json::array())) {
      CellRule r;
      if (rj.contains("location")) r.location = rj["location"].get<std::string>();
      if (rj.contains("companion")) r.companion = rj["companion"].get<std::string>();
      if (rj.contains("weekday")) r.weekday = rj["weekday"].get<int>();
      if (rj.contains("period")) {
        auto p = parse_day_period(rj["period"].get<std::string>());
        if (!p) throw ValidationError("model", "unknown day period " + rj["period"].dump());
        r.period = *p;
      }
      r.cell = cell_from_json(rj.at("cell"));
      m.rules.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("model", e.what());
  }
  check_model(m);
  return m;
}

// Ground truth -------------------------------------------------------------------

std::optional<std::string> truth_label(const context::SituationalContext& ctx, cal::Category category) {
  switch (category) {
  case cal::Category::WE: return ctx.we;
  case cal::Category::WA: return ctx.wa.empty() ? std::nullopt : std::optional(ctx.wa.front());
  case cal::Category::WI: return ctx.wi;
  case cal::Category::WO: return ctx.wo.empty() ? std::string("Alone") : ctx.wo.front();
  case cal::Category::WU: return ctx.wu.empty() ? std::nullopt : std::optional(ctx.wu.front());
  }
  return std::nullopt;
}

context::LifeSequence generate_ground_truth(const std::string& person, Instant start, Instant end, std::uint64_t seed,
                                            const GroundTruthOptions& options) {
  std::vector<std::string> places = options.locations;
  if (places.empty())
    for (const auto& [p, rate] : location_rates()) places.push_back(p);
  Rng rng(mix64(seed ^ fnv1a(person)));
  context::LifeSequence seq{person, "simulated ground truth", {}};
  auto minutes = [](Duration d) { return std::max<std::int64_t>(1, d / kMinute); };
  double mean = double(minutes(options.mean_duration));
  std::int64_t min_len = minutes(options.min_duration);
  auto companions = catalog::companions();
  auto moods = catalog::moods();
  auto activities = catalog::activities();

  Instant t = start;
  std::uint64_t n = 0;
  while (t < end) {
    std::int64_t len = std::max<std::int64_t>(min_len, std::llround(-mean * std::log(1.0 - rng.uniform())));
    Instant stop = std::min(end, t + len * kMinute);
    context::SituationalContext ctx;
    ctx.id = person + "-" + std::to_string(n++);
    ctx.start = t;
    ctx.end = stop;
    ctx.we = places[rng.below(places.size())];
    std::string activity;
    do {
      activity = std::string(activities[rng.below(activities.size())]);
    } while (catalog::implausible_pair(activity, *ctx.we));
    ctx.wa = {activity};
    auto who = companions[rng.below(companions.size())];
    if (who != "Alone") ctx.wo = {std::string(who)};
    ctx.wi = std::string(moods[rng.below(moods.size())]);
    seq.contexts.push_back(std::move(ctx));
    t = stop;
  }
  return seq;
}

// Simulation ---------------------------------------------------------------------

namespace {

struct QuestionInfo {
  const cal::QuestionCollection* collection;
  QuestionKind diary;
};

struct SensorInfo {
  const cal::SensorCollection* collection;
  bool on_change;
};

struct PlanIndex {
  std::map<schedule::SourceRef, QuestionInfo> questions;
  std::map<schedule::SourceRef, SensorInfo> sensors;

  explicit PlanIndex(const cal::ExperimentPlan& plan) {
    for (const auto& c : plan.calendars)
      for (const auto& ctx : c.contexts) {
        for (const auto& q : ctx.questions) {
          auto unit = cal::unit_length(q.rrule.frequency);
          bool diary = unit && *unit * std::int64_t(std::min<std::uint64_t>(q.rrule.interval, 1u << 20)) < kDay;
          questions[{c.id, ctx.id, q.cid, schedule::SourceKind::Question}] = {
              &q, diary ? QuestionKind::TimeDiary : QuestionKind::Task};
        }
        for (const auto& s : ctx.sensors) {
          bool on_change = std::any_of(s.extensions.begin(), s.extensions.end(), [](const cal::ContentLine& l) {
            return l.name == "X-ILOG-TRIGGER" && l.value == "ON-CHANGE";
          });
          if (const auto* spec = catalog::find_sensor(s.sensor.name))
            on_change = on_change || spec->cadence == catalog::Cadence::OnChange;
          sensors[{c.id, ctx.id, s.sid, schedule::SourceKind::Sensor}] = {&s, on_change};
        }
      }
  }
};

// Expected answer for a question given the true label: the label itself when
// the question offers it (or is free text), otherwise a fixed option derived
// from the label.
std::string expected_answer(const cal::Question& q, const std::string& label) {
  const auto& opts = q.options;
  if (opts.empty() || std::find(opts.begin(), opts.end(), label) != opts.end()) return label;
  return opts[fnv1a(label) % opts.size()];
}

std::string wrong_answer(const cal::Question& q, const std::string& right, Rng& rng) {
  std::vector<const std::string*> others;
  for (const auto& o : q.options)
    if (o != right) others.push_back(&o);
  if (others.empty()) return right == "Not sure" ? "Unsure" : "Not sure";
  return *others[rng.below(others.size())];
}

std::string location_value(std::string_view place, const std::string& participant, Rng& rng) {
  // Fixed coordinates per (participant, place) around Trento, with small jitter.
  auto h = mix64(fnv1a(participant) ^ fnv1a(place));
  double lat = 46.0 + double(h & 0xffff) / 65536.0 * 0.2 + (rng.uniform() - 0.5) * 0.001;
  double lon = 11.0 + double((h >> 16) & 0xffff) / 65536.0 * 0.2 + (rng.uniform() - 0.5) * 0.001;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s|%.5f,%.5f", std::string(catalog::place_class(place)).c_str(), lat, lon);
  return buf;
}

std::string movement_value(const context::SituationalContext* ctx) {
  if (!ctx || ctx->wa.empty()) return "unknown";
  const auto& a = ctx->wa.front();
  if (a == "Driving" || a == "Commuting" || a == "Traveling") return "in_vehicle";
  if (a == "Walking" || a == "Errands" || a == "Shopping") return "walking";
  if (a == "Cycling") return "on_bicycle";
  if (a == "Sport/exercise") return "running";
  return "still";
}

std::string wifi_value(const context::SituationalContext* ctx) {
  if (!ctx || !ctx->we) return "disconnected";
  auto cls = catalog::place_class(*ctx->we);
  if (cls == "home") return "home-net";
  if (cls == "university") return "eduroam";
  if (cls == "workplace") return "work-net";
  return "disconnected";
}

Event reading(const std::string& participant, const schedule::SourceRef& src, std::optional<std::uint64_t> seq,
              Instant at, const std::string& sensor, std::string value) {
  Event e;
  e.participant = participant;
  e.kind = EventKind::SensorReading;
  e.at = at;
  e.source = src;
  e.seq_no = seq;
  e.sensor = sensor;
  e.value = std::move(value);
  return e;
}

void check_coverage(const PlanIndex& index, const schedule::Timeline& tl, const context::LifeSequence& truth) {
  std::set<cal::Category> needed;
  for (const auto& c : tl.collections)
    if (c.accepted && c.source.kind == schedule::SourceKind::Question)
      if (auto it = index.questions.find(c.source); it != index.questions.end())
        needed.insert(it->second.collection->question.category);
  for (auto cat : needed) {
    bool found = std::any_of(truth.contexts.begin(), truth.contexts.end(),
                             [&](const auto& ctx) { return truth_label(ctx, cat).has_value(); });
    if (!found)
      throw CoverageError("ground truth of " + tl.participant + " has no " + std::string(cal::to_string(cat)) +
                          " labels");
  }
}

} // namespace

EventLog simulate_participant(const SimulationInput& input, const context::ParticipantProfile& profile) {
  if (!input.plan || !input.timelines) throw ValidationError("simulation", "plan and timelines are required");
  auto tl_it = input.timelines->find(profile.id);
  if (tl_it == input.timelines->end()) throw NotFound("no timeline for participant " + profile.id);
  const auto& tl = tl_it->second;
  static const context::LifeSequence kEmpty;
  auto gt_it = input.ground_truth.find(profile.id);
  const auto& truth = gt_it == input.ground_truth.end() ? kEmpty : gt_it->second;
  PlanIndex index(*input.plan);
  check_coverage(index, tl, truth);
  const auto& model = input.model;
  auto tz = TimeZone::load(profile.timezone);
  Rng rng(mix64(model.seed ^ fnv1a(profile.id)));
  const std::string& pid = profile.id;

  EventLog out;
  struct Answer {
    Instant started, stored;
  };
  std::vector<Answer> answers;

  for (const auto& entry : tl.entries) {
    if (entry.cancelled) continue;
    const auto& occ = entry.occurrence;
    if (occ.source.kind == schedule::SourceKind::Question) {
      auto qit = index.questions.find(occ.source);
      if (qit == index.questions.end()) continue;
      const auto& q = qit->second.collection->question;
      Event base;
      base.participant = pid;
      base.source = occ.source;
      base.seq_no = occ.seq_no;
      base.diary = qit->second.diary;

      // Fixed number of draws per occurrence keeps streams aligned across models.
      double u_fail = rng.uniform(), u_answer = rng.uniform(), u_correct = rng.uniform();
      Rng draw(rng.next());

      Event gen = base;
      gen.kind = EventKind::QuestionGenerated;
      gen.at = occ.scheduled_at;
      out.push_back(gen);
      if (u_fail < model.p_delivery_failure) {
        Event missed = base;
        missed.kind = EventKind::Missed;
        missed.at = std::max(occ.window_end, gen.at);
        out.push_back(missed);
        continue;
      }
      Event del = base;
      del.kind = EventKind::QuestionDelivered;
      del.at = occ.scheduled_at + model.delivery_latency;
      out.push_back(del);

      const auto* ctx = context::find_context(truth, del.at);
      Instant local = tz.to_local(del.at);
      std::string place = ctx && ctx->we ? *ctx->we : "";
      std::string company = ctx ? *truth_label(*ctx, cal::Category::WO) : "";
      const auto& cell = model.resolve(place, company, iso_weekday(local), day_period(hour_of_day(local)));

      if (u_answer >= cell.p_answer) {
        Event missed = base;
        missed.kind = EventKind::Missed;
        missed.at = std::max(occ.window_end, del.at);
        out.push_back(missed);
        continue;
      }
      Event started = base;
      started.kind = EventKind::AnswerStarted;
      started.at = del.at + cell.reaction.sample(draw);
      Event stored = base;
      stored.kind = EventKind::AnswerStored;
      stored.at = started.at + cell.completion.sample(draw);
      auto label = ctx ? truth_label(*ctx, q.category) : std::nullopt;
      if (label) {
        std::string right = expected_answer(q, *label);
        bool correct = u_correct < cell.p_correct;
        stored.value = correct ? right : wrong_answer(q, right, draw);
        stored.correct = correct;
      } else if (!q.options.empty()) {
        stored.value = q.options[draw.below(q.options.size())];
      } else {
        stored.value = "Not sure";
      }
      out.push_back(started);
      out.push_back(stored);
      answers.push_back({started.at, stored.at});
      continue;
    }

    auto sit = index.sensors.find(occ.source);
    if (sit == index.sensors.end()) continue;
    const auto& sc = *sit->second.collection;
    const std::string& name = sc.sensor.name;
    if (!sit->second.on_change) {
      const auto* ctx = context::find_context(truth, occ.scheduled_at);
      std::string value;
      if (name == "Location")
        value = ctx && ctx->we ? location_value(*ctx->we, pid, rng) : "unknown";
      else if (name == "Movement Activity Label")
        value = movement_value(ctx);
      else if (const auto* spec = catalog::find_sensor(name); spec && spec->big)
        value = "summary n=" + std::to_string(std::max<std::int64_t>(1, (occ.window_end - occ.scheduled_at) / spec->period));
      else
        value = "ok";
      out.push_back(reading(pid, occ.source, occ.seq_no, occ.scheduled_at, name, std::move(value)));
      continue;
    }

    // On-change sensors: state at the window start, then one reading per
    // change of state inside the window.
    Instant from = occ.scheduled_at, to = occ.window_end;
    if (name == "WIFI Network Connected to") {
      std::string state = wifi_value(context::find_context(truth, from));
      out.push_back(reading(pid, occ.source, std::nullopt, from, name, state));
      auto it = std::upper_bound(truth.contexts.begin(), truth.contexts.end(), from,
                                 [](Instant t, const auto& c) { return t < c.start; });
      for (; it != truth.contexts.end() && it->start < to; ++it) {
        auto next = wifi_value(&*it);
        if (next == state) continue;
        state = next;
        out.push_back(reading(pid, occ.source, std::nullopt, it->start, name, state));
      }
    } else if (name != "Screen Status") {
      out.push_back(reading(pid, occ.source, std::nullopt, from, name, "idle"));
    }
  }

  // The screen follows answering; handled after all answers are known.
  for (const auto& entry : tl.entries) {
    if (entry.cancelled || entry.occurrence.source.kind != schedule::SourceKind::Sensor) continue;
    auto sit = index.sensors.find(entry.occurrence.source);
    if (sit == index.sensors.end() || !sit->second.on_change || sit->second.collection->sensor.name != "Screen Status")
      continue;
    Instant from = entry.occurrence.scheduled_at, to = entry.occurrence.window_end;
    for (const auto& a : answers) {
      if (a.started >= from && a.started < to)
        out.push_back(reading(pid, entry.occurrence.source, std::nullopt, a.started, "Screen Status", "on"));
      if (a.stored >= from && a.stored < to)
        out.push_back(reading(pid, entry.occurrence.source, std::nullopt, a.stored, "Screen Status", "off"));
    }
  }

  std::sort(out.begin(), out.end(), event_less);
  return out;
}

namespace {

EventLog merge(std::vector<EventLog>& parts) {
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  EventLog out;
  out.reserve(total);
  for (auto& p : parts) std::move(p.begin(), p.end(), std::back_inserter(out));
  std::sort(out.begin(), out.end(), event_less);
  return out;
}

void check_input(const SimulationInput& input) {
  check_model(input.model);
  std::set<std::string> seen;
  for (const auto& p : input.profiles)
    if (!seen.insert(p.id).second) throw DuplicateIdError("profiles", "participant " + p.id + " listed twice");
}

} // namespace

EventLog run_simulation_serial(const SimulationInput& input) {
  check_input(input);
  std::vector<EventLog> parts;
  for (const auto& p : input.profiles) parts.push_back(simulate_participant(input, p));
  return merge(parts);
}

EventLog run_simulation(const SimulationInput& input) {
  check_input(input);
  const auto n = static_cast<std::ptrdiff_t>(input.profiles.size());
  std::vector<EventLog> parts(input.profiles.size());
  std::vector<std::exception_ptr> errors(input.profiles.size());
#if defined(ILOG_HAVE_OPENMP)
#pragma omp parallel for schedule(dynamic)
#endif
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      parts[std::size_t(i)] = simulate_participant(input, input.profiles[std::size_t(i)]);
    } catch (...) {
      errors[std::size_t(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return merge(parts);
}

// Faults -----------------------------------------------------------------------------

EventLog inject_fault(EventLog log, const Fault& fault) {
  if (const auto* b = std::get_if<BlackoutDay>(&fault)) {
    auto day = day_index(b->day);
    std::erase_if(log, [&](const Event& e) { return day_index(e.at) == day; });
  } else if (const auto* d = std::get_if<SensorDropout>(&fault)) {
    std::erase_if(log, [&](const Event& e) {
      return e.is_reading() && e.sensor == d->sensor && e.at >= d->from && e.at < d->to;
    });
  } else if (const auto* a = std::get_if<AnswerBurst>(&fault)) {
    std::set<OccurrenceKey> hit;
    for (const auto& e : log)
      if (e.kind == EventKind::AnswerStored && e.participant == a->participant && e.at >= a->from && e.at < a->to)
        hit.insert(*key_of(e));
    if (hit.empty()) return log;
    // The burst starts once every affected question has been delivered, so
    // lifecycle order survives.
    Instant burst = a->from;
    for (const auto& e : log)
      if (e.kind == EventKind::QuestionDelivered && hit.contains(*key_of(e))) burst = std::max(burst, e.at);
    Duration step = std::max<Duration>(Duration{2}, kMinute / std::int64_t(hit.size() + 1));
    std::map<OccurrenceKey, Instant> slot;
    std::int64_t i = 0;
    for (const auto& k : hit) slot[k] = burst + step * ++i;
    for (auto& e : log) {
      auto k = key_of(e);
      if (!k || !hit.contains(*k)) continue;
      if (e.kind == EventKind::AnswerStarted) e.at = slot[*k] - Duration{1};
      if (e.kind == EventKind::AnswerStored) e.at = slot[*k];
    }
    std::sort(log.begin(), log.end(), event_less);
  }
  return log;
}

// Serialization ---------------------------------------------------------------------

nlohmann::ordered_json event_to_json(const Event& e) {
  nlohmann::ordered_json j{{"participant", e.participant},
                           {"kind", to_string(e.kind)},
                           {"at", format_iso(e.at)},
                           {"source", schedule::to_string(e.source)}};
  if (e.seq_no) j["seq"] = *e.seq_no;
  if (e.is_reading())
    j["sensor"] = e.sensor;
  else
    j["diary"] = to_string(e.diary);
  if (e.value) j["value"] = *e.value;
  if (e.correct) j["correct"] = *e.correct;
  return j;
}

Event event_from_json(const nlohmann::json& j) {
  auto bad = [&](const std::string& why) { return SchemaError("event " + j.dump() + ": " + why); };
  if (!j.is_object()) throw bad("not an object");
  auto str = [&](const char* field) -> std::string {
    if (!j.contains(field) || !j[field].is_string()) throw bad(std::string("missing string field '") + field + "'");
    return j[field].get<std::string>();
  };
  Event e;
  e.participant = str("participant");
  if (e.participant.empty()) throw bad("empty participant");
  auto kind = parse_event_kind(str("kind"));
  if (!kind) throw bad("unknown kind");
  e.kind = *kind;
  auto at = parse_iso(str("at"));
  if (!at) throw bad("bad timestamp");
  e.at = *at;
  auto src = schedule::parse_source(str("source"));
  if (!src) throw bad("bad source reference");
  e.source = *src;
  if (j.contains("seq")) {
    if (!j["seq"].is_number_unsigned()) throw bad("seq must be a non-negative integer");
    e.seq_no = j["seq"].get<std::uint64_t>();
  }
  if (e.is_reading()) {
    e.sensor = str("sensor");
    if (e.source.kind != schedule::SourceKind::Sensor) throw bad("reading from a question source");
  } else {
    if (!e.seq_no) throw bad("question events need seq");
    if (e.source.kind != schedule::SourceKind::Question) throw bad("question event from a sensor source");
    if (j.contains("diary")) {
      auto d = str("diary");
      if (d != "TimeDiary" && d != "Task") throw bad("unknown diary kind");
      e.diary = d == "TimeDiary" ? QuestionKind::TimeDiary : QuestionKind::Task;
    }
  }
  if (j.contains("value")) e.value = str("value");
  if (j.contains("correct")) {
    if (!j["correct"].is_boolean()) throw bad("correct must be boolean");
    e.correct = j["correct"].get<bool>();
  }
  return e;
}

std::string write_event_log(const EventLog& log) {
  std::string out = nlohmann::ordered_json{{"schema", "ilog.events"}, {"version", kEventSchemaVersion}}.dump();
  out += '\n';
  for (const auto& e : log) {
    out += event_to_json(e).dump();
    out += '\n';
  }
  return out;
}

EventLog read_event_log(std::string_view text) {
  EventLog log;
  std::size_t pos = 0, line_no = 0;
  bool header = false;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw SchemaError("line " + std::to_string(line_no) + ": not JSON");
    }
    if (!header) {
      if (!j.is_object() || j.value("schema", "") != "ilog.events")
        throw SchemaError("line 1: missing ilog.events header");
      if (j.value("version", 0) != kEventSchemaVersion)
        throw SchemaError("unsupported event log version " + j.value("version", nlohmann::json()).dump());
      header = true;
      continue;
    }
    log.push_back(event_from_json(j));
  }
  if (!header) throw SchemaError("empty event log");
  return log;
}

std::string log_digest(const EventLog& log) { return hex_digest(write_event_log(log)); }

} // namespace ilog::sim
