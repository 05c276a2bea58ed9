#include "cli.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "ilog/catalog.hpp"
#include "ilog/errors.hpp"
#include "ilog/predictor.hpp"
#include "ilog/quality.hpp"
#include "ilog/schedule.hpp"
#include "ilog/service.hpp"
#include "ilog/sim.hpp"

namespace ilog::cli {

namespace {

using ojson = nlohmann::ordered_json;

// Failures that are the operator's fault rather than the input's.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path);
  out << content;
  if (!out.flush()) throw UsageError("cannot write " + path);
}

nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path, e.what());
  }
}

cal::ExperimentPlan read_plan(const std::string& path) { return cal::parse_plan(read_file(path)); }
sim::EventLog read_log(const std::string& path) { return sim::read_event_log(read_file(path)); }
context::Cohort read_cohort(const std::string& path) { return context::cohort_from_json(read_json(path)); }

std::optional<Instant> parse_when(const std::string& s, const std::string& what) {
  if (s.empty()) return std::nullopt;
  if (auto t = parse_iso(s)) return t;
  if (auto t = parse_date(s)) return t;
  throw UsageError(what + ": expected YYYY-MM-DD or an ISO-8601 UTC instant, got '" + s + "'");
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string seconds(Duration d) { return fixed(std::chrono::duration<double>(d).count(), 1) + "s"; }

// Text tables: columns padded to the widest cell.
void print_table(std::ostream& out, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (width.size() <= i) width.push_back(0);
      width[i] = std::max(width[i], r[i].size());
    }
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) line += "  ";
      line += r[i];
      if (i + 1 < r.size()) line.append(width[i] - r[i].size(), ' ');
    }
    out << line << '\n';
  }
}

enum class Format { Text, Csv, Ndjson };

void add_format(CLI::App* cmd, Format& f) {
  cmd->add_option("--format", f, "Output format")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, Format>{{"text", Format::Text}, {"csv", Format::Csv}, {"ndjson", Format::Ndjson}},
          CLI::ignore_case));
}

// Subcommands --------------------------------------------------------------------------

int validate(const std::string& path, std::ostream& err) {
  auto diagnostics = cal::lint_plan(read_file(path));
  for (const auto& d : diagnostics) err << path << ": " << cal::format_diagnostic(d) << '\n';
  return cal::error_count(diagnostics) ? 1 : 0;
}

struct ExpandArgs {
  std::string plan;
  std::string participant = "participant";
  std::uint64_t cap = schedule::kDefaultExpansionCap;
  std::string source, kind;
  bool ics = false;
  Format format = Format::Text;
};

void expand(const ExpandArgs& a, std::ostream& out) {
  auto plan = read_plan(a.plan);
  auto tl = schedule::compile_one(plan, a.participant, a.cap);
  std::optional<schedule::SourceRef> source;
  if (!a.source.empty() && !(source = schedule::parse_source(a.source)))
    throw UsageError("--source expects calendar/context/Qn or Sn, got '" + a.source + "'");
  std::erase_if(tl.entries, [&](const schedule::Entry& e) {
    const auto& s = e.occurrence.source;
    if (source && s != *source) return true;
    if (a.kind == "question") return s.kind != schedule::SourceKind::Question;
    if (a.kind == "sensor") return s.kind != schedule::SourceKind::Sensor;
    return false;
  });
  if (a.ics) {
    out << schedule::export_vevents(tl, plan);
    return;
  }
  switch (a.format) {
  case Format::Ndjson: out << schedule::export_records(tl); return;
  case Format::Csv:
    out << "participant,source,seq,scheduled_at,window_end,cancelled\n";
    for (const auto& e : tl.entries)
      out << tl.participant << ',' << schedule::to_string(e.occurrence.source) << ',' << e.occurrence.seq_no << ','
          << format_iso(e.occurrence.scheduled_at) << ',' << format_iso(e.occurrence.window_end) << ','
          << (e.cancelled ? 1 : 0) << '\n';
    return;
  case Format::Text:
    for (const auto& e : tl.entries)
      out << format_iso(e.occurrence.scheduled_at) << ' ' << schedule::to_string(e.occurrence.source) << '#'
          << e.occurrence.seq_no << (e.cancelled ? " cancelled" : "") << '\n';
    return;
  }
}

struct SimulateArgs {
  std::string plan, profiles, model, out;
  std::optional<std::uint64_t> seed;
};

void simulate(const SimulateArgs& a) {
  auto plan = read_plan(a.plan);
  auto cohort = read_cohort(a.profiles);
  auto model = a.model.empty() ? sim::location_model(0) : sim::model_from_json(read_json(a.model));
  if (a.seed) model.seed = *a.seed;
  sim::check_model(model);
  auto timelines = schedule::compile(plan, cohort.profiles);
  auto span = quality::experiment_progress(plan, Instant{});
  sim::SimulationInput input;
  input.plan = &plan;
  input.timelines = &timelines;
  input.profiles = cohort.profiles;
  input.model = model;
  for (const auto& p : cohort.profiles)
    input.ground_truth[p.id] =
        sim::generate_ground_truth(p.id, floor_day(span.start), floor_day(span.end) + 2 * kDay, model.seed);
  write_file(a.out, sim::write_event_log(sim::run_simulation(input)));
}

struct QualityArgs {
  std::string log, params, plan, profiles;
  std::string what = "all";
  Format format = Format::Text;
};

void quality_report(const QualityArgs& a, std::ostream& out, std::ostream& err) {
  auto log = read_log(a.log);
  auto params = a.params.empty() ? quality::QualityParameters{} : quality::params_from_json(read_json(a.params));
  quality::check_params(params);
  auto rankings = quality::rank_all(log, params);
  std::vector<quality::QualityFlag> flags;
  bool want_flags = a.what != "rankings";
  bool want_rankings = a.what != "flags";
  if (want_flags) {
    if (a.plan.empty()) {
      if (a.what == "flags") throw UsageError("--plan is required for flags");
      err << "note: no --plan given, skipping data-quality flags\n";
      want_flags = false;
    } else {
      auto plan = read_plan(a.plan);
      std::map<std::string, schedule::Timeline> timelines;
      if (!a.profiles.empty()) timelines = schedule::compile(plan, read_cohort(a.profiles).profiles);
      flags = quality::run_quality_checks(log, plan, a.profiles.empty() ? nullptr : &timelines);
    }
  }
  switch (a.format) {
  case Format::Csv:
    if (want_rankings) out << quality::rankings_csv(rankings);
    if (want_rankings && want_flags) out << '\n';
    if (want_flags) out << quality::flags_csv(flags);
    return;
  case Format::Ndjson:
    if (want_rankings)
      for (const auto& r : rankings) out << quality::ranking_to_json(r).dump() << '\n';
    if (want_flags) out << quality::flags_ndjson(flags);
    return;
  case Format::Text: {
    if (want_rankings) {
      std::vector<std::vector<std::string>> rows{{"participant", "verdict", "unanswered", "avg_reaction", "avg_completion"}};
      for (const auto& r : rankings)
        rows.push_back({r.participant, std::string(quality::to_string(r.verdict)), std::to_string(r.unanswered_count),
                        seconds(r.avg_reaction), seconds(r.avg_completion)});
      print_table(out, rows);
    }
    if (want_flags) {
      if (want_rankings) out << '\n';
      out << flags.size() << " flag(s)\n";
      for (const auto& f : flags)
        out << format_iso(f.at) << "  " << f.participant << "  " << quality::to_string(f.kind) << "  " << f.detail
            << '\n';
    }
    return;
  }
  }
}

struct HeatmapArgs {
  std::string log, from, to, profiles;
  Format format = Format::Csv;
};

void heatmap(const HeatmapArgs& a, std::ostream& out) {
  auto log = read_log(a.log);
  std::vector<std::string> enrolled;
  if (!a.profiles.empty())
    for (const auto& p : read_cohort(a.profiles).profiles) enrolled.push_back(p.id);
  auto from = parse_when(a.from, "--from");
  auto to = parse_when(a.to, "--to");
  if (!from || !to) {
    if (log.empty() && (!from || !to)) throw UsageError("empty log: give --from and --to");
    auto [lo, hi] = std::minmax_element(log.begin(), log.end(), [](const auto& x, const auto& y) { return x.at < y.at; });
    if (!from) from = floor_day(lo->at);
    if (!to) to = floor_day(hi->at) + kDay;
  }
  if (*to < *from) throw UsageError("--to is before --from");
  auto h = quality::compliance_heatmap(log, *from, *to, enrolled);
  switch (a.format) {
  case Format::Csv: out << quality::heatmap_csv(h); return;
  case Format::Ndjson: out << quality::heatmap_to_json(h).dump() << '\n'; return;
  case Format::Text: {
    std::vector<std::vector<std::string>> rows{{"day"}};
    for (const auto& p : h.participants) rows[0].push_back(p);
    for (std::size_t d = 0; d < h.days.size(); ++d) {
      std::vector<std::string> row{format_date(h.days[d]) + (h.empty_day[d] ? " (no data)" : "")};
      for (std::size_t p = 0; p < h.participants.size(); ++p) {
        auto rate = h.cells[p][d].rate();
        row.push_back(rate ? fixed(*rate, 2) : "-");
      }
      rows.push_back(std::move(row));
    }
    print_table(out, rows);
    return;
  }
  }
}

struct ModelArgs {
  std::string log, plan, profiles;
  std::string classifier = "rf";
  std::vector<std::string> params;
  std::uint64_t seed = 0;
  std::string label = "response";
  bool mood = false;
};

predict::ClassifierSpec classifier_spec(const ModelArgs& a) {
  predict::ClassifierSpec spec;
  auto kind = predict::parse_classifier(a.classifier);
  if (!kind) throw UsageError("unknown classifier '" + a.classifier + "' (rf, knn, lr, gnb, svm)");
  spec.kind = *kind;
  spec.seed = a.seed;
  for (const auto& kv : a.params) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--param expects key=value, got '" + kv + "'");
    try {
      spec.hyperparameters[kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
    } catch (const std::exception&) {
      throw UsageError("--param " + kv + ": value is not a number");
    }
  }
  return spec;
}

predict::Dataset dataset(const ModelArgs& a, std::vector<context::ParticipantProfile>* profiles = nullptr) {
  auto log = read_log(a.log);
  auto plan = read_plan(a.plan);
  auto cohort = read_cohort(a.profiles);
  predict::FeatureOptions options;
  options.vocabulary = cohort.vocabulary;
  auto rows = predict::extract_all(log, plan, cohort.profiles, options);
  if (profiles) *profiles = cohort.profiles;
  return predict::make_dataset(rows, a.mood,
                               a.label == "correctness" ? predict::LabelSource::Correctness
                                                        : predict::LabelSource::ResponseTime);
}

std::string metrics_line(const predict::Metrics& m) {
  return "accuracy " + fixed(m.accuracy) + "  kappa " + fixed(m.kappa) + "  precision " + fixed(m.precision) +
         "  recall " + fixed(m.recall) + "  f1 " + fixed(m.f1);
}

void print_report(const predict::EvalReport& r, Format format, std::ostream& out) {
  if (format != Format::Text) {
    out << predict::report_to_json(r).dump() << '\n';
    return;
  }
  out << predict::to_string(r.kind) << ", " << r.split << ": " << r.train_rows << " train / " << r.test_rows
      << " test rows\n";
  out << "  pooled     " << metrics_line(r.metrics) << '\n';
  if (r.folds.size() > 1) out << "  fold mean  " << metrics_line(r.fold_mean) << '\n';
  const auto& c = r.confusion.m;
  out << "  confusion  [[" << c[0][0] << ", " << c[0][1] << "], [" << c[1][0] << ", " << c[1][1] << "]]\n";
}

// --protocol 5fold | participants[:TRAIN:TEST] | participant:ID[:TRAIN:TEST], spans in days.
struct ProtocolArg {
  std::string kind;
  std::string participant;
  Duration train = 14 * kDay, test = 14 * kDay;
};

ProtocolArg parse_protocol(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream in(s);
  for (std::string p; std::getline(in, p, ':');) parts.push_back(p);
  ProtocolArg out;
  if (parts.empty()) throw UsageError("empty --protocol");
  out.kind = parts[0];
  std::size_t next = 1;
  if (out.kind == "5fold" && parts.size() == 1) return out;
  if (out.kind == "participant") {
    if (parts.size() < 2 || parts[1].empty()) throw UsageError("--protocol participant:ID needs an id");
    out.participant = parts[1];
    next = 2;
  } else if (out.kind != "participants") {
    throw UsageError("--protocol expects 5fold, participants[:TRAIN:TEST] or participant:ID[:TRAIN:TEST]");
  }
  if (parts.size() == next) return out;
  if (parts.size() != next + 2) throw UsageError("--protocol spans are TRAIN:TEST in days");
  try {
    out.train = std::stoi(parts[next]) * kDay;
    out.test = std::stoi(parts[next + 1]) * kDay;
  } catch (const std::exception&) {
    throw UsageError("--protocol spans are whole days");
  }
  return out;
}

struct PredictArgs : ModelArgs {
  std::string protocol = "5fold";
  std::string save_model;
  Format format = Format::Text;
};

void predict_cmd(const PredictArgs& a, std::ostream& out, std::ostream& err) {
  auto spec = classifier_spec(a);
  auto proto = parse_protocol(a.protocol);
  auto data = dataset(a);
  if (proto.kind == "5fold") {
    print_report(predict::train_eval(data, spec, predict::FiveFoldCV{}), a.format, out);
  } else if (proto.kind == "participant") {
    print_report(predict::train_eval(data, spec, predict::PerParticipantSplit{proto.participant, proto.train, proto.test}),
                 a.format, out);
  } else {
    for (const auto& r : predict::evaluate_participants(data, spec, proto.train, proto.test)) {
      if (r.report) print_report(*r.report, a.format, out);
      else err << "participant " << r.participant << " skipped: " << r.skipped << '\n';
    }
  }
  if (!a.save_model.empty()) {
    auto model = predict::make_classifier(spec);
    model->fit(data.x, data.y);
    write_file(a.save_model, predict::save_model(data.encoder, *model));
  }
}

struct RecommendArgs : ModelArgs {
  std::string participant;
  std::string now;
  std::string policy;
  double indifference = 0.05;
  Format format = Format::Text;
};

void recommend(const RecommendArgs& a, std::ostream& out) {
  auto spec = classifier_spec(a);
  std::vector<context::ParticipantProfile> profiles;
  auto data = dataset(a, &profiles);
  auto rec = predict::recommend_windows(data, a.participant, spec, a.indifference);
  std::optional<predict::RevisionPlan> revisions;
  if (auto now = parse_when(a.now, "--now")) {
    auto plan = read_plan(a.plan);
    auto profile = std::find_if(profiles.begin(), profiles.end(), [&](const auto& p) { return p.id == a.participant; });
    auto policy = a.policy.empty() ? schedule::RevisionPolicy{} : schedule::policy_from_json(read_json(a.policy));
    revisions = predict::plan_revisions(rec, schedule::compile_one(plan, a.participant), policy, profile->timezone,
                                        *now, 7 * kDay, a.indifference);
  }
  if (a.format != Format::Text) {
    auto j = predict::recommendation_to_json(rec);
    if (revisions) {
      ojson list = ojson::array();
      for (const auto& p : revisions->proposals)
        list.push_back({{"revision", schedule::revision_to_json(p.revision)}, {"applied", p.applied}, {"reason", p.reason}});
      j["revisions"] = std::move(list);
    }
    out << j.dump() << '\n';
    return;
  }
  static const char* kDays[] = {"Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"};
  static const char* kPeriods[] = {"Morning", "Afternoon", "Evening", "Night"};
  out << "participant " << rec.participant << (rec.no_preference ? ": no clear preference\n" : "\n");
  std::vector<std::vector<std::string>> rows{{"rank", "weekday", "period", "p_high"}};
  for (std::size_t i = 0; i < rec.ranked.size(); ++i) {
    const auto& c = rec.ranked[i];
    rows.push_back({std::to_string(i + 1), kDays[c.weekday - 1], kPeriods[int(c.period)], fixed(c.probability, 3)});
  }
  print_table(out, rows);
  if (revisions) {
    std::size_t applied = 0;
    for (const auto& p : revisions->proposals) applied += p.applied;
    out << '\n' << applied << " of " << revisions->proposals.size() << " proposed shift(s) within policy\n";
  }
}

struct ServeArgs {
  std::string data_dir, bind = "127.0.0.1:8080", tokens;
};

int serve(ServeArgs a, std::ostream& err) {
  if (a.data_dir.empty())
    if (const char* env = std::getenv("ILOG_DATA_DIR")) a.data_dir = env;
  if (const char* env = std::getenv("ILOG_BIND"); env && a.bind == "127.0.0.1:8080") a.bind = env;
  if (a.tokens.empty())
    if (const char* env = std::getenv("ILOG_TOKENS")) a.tokens = env;
  if (a.data_dir.empty()) throw UsageError("--data-dir (or ILOG_DATA_DIR) is required");
  if (a.tokens.empty()) throw UsageError("--tokens (or ILOG_TOKENS) is required");
  std::filesystem::create_directories(a.data_dir);

  // Signals are taken synchronously on this thread; the server runs on another.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  service::Service svc(a.data_dir, service::TokenTable::load(a.tokens));
  service::Server server(svc, a.bind);
  err << "listening on " << a.bind.substr(0, a.bind.rfind(':')) << ':' << server.port() << '\n' << std::flush;
  std::thread worker([&] { server.run(); });
  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  worker.join();
  return 0;
}

void add_model_options(CLI::App* cmd, ModelArgs& a) {
  cmd->add_option("log", a.log, "Event log")->required()->check(CLI::ExistingFile);
  cmd->add_option("--plan", a.plan, "Experiment plan (.ilogcal)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--profiles", a.profiles, "Participant profiles (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--classifier", a.classifier, "rf, knn, lr, gnb or svm")->capture_default_str();
  cmd->add_option("--param", a.params, "Hyperparameter key=value (repeatable)");
  cmd->add_option("--seed", a.seed, "Random seed")->capture_default_str();
  cmd->add_option("--label", a.label, "Quality label source")
      ->check(CLI::IsMember({"response", "correctness"}))
      ->capture_default_str();
  cmd->add_flag("--mood", a.mood, "Include WI (mood) features");
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"iLog experiment tools", args.empty() ? "ilog" : args[0]};
  app.require_subcommand(1);
  app.fallthrough(false);

  std::string validate_path;
  auto* v = app.add_subcommand("validate", "Check a plan; diagnostics go to stderr");
  v->add_option("plan", validate_path, "Plan file (.ilogcal)")->required()->check(CLI::ExistingFile);

  ExpandArgs ex;
  auto* e = app.add_subcommand("expand", "Print the compiled timeline of a plan");
  e->add_option("plan", ex.plan, "Plan file (.ilogcal)")->required()->check(CLI::ExistingFile);
  e->add_option("--participant", ex.participant, "Participant id to compile for")->capture_default_str();
  e->add_option("--cap", ex.cap, "Maximum occurrences per collection")->capture_default_str();
  e->add_option("--source", ex.source, "Only this collection, e.g. 1/1/S1");
  e->add_option("--kind", ex.kind, "Only question or sensor occurrences")->check(CLI::IsMember({"question", "sensor"}));
  e->add_flag("--ics", ex.ics, "Emit VEVENTs instead of records");
  add_format(e, ex.format);

  SimulateArgs sa;
  auto* s = app.add_subcommand("simulate", "Simulate participants and write an event log");
  s->add_option("plan", sa.plan, "Plan file (.ilogcal)")->required()->check(CLI::ExistingFile);
  s->add_option("--profiles", sa.profiles, "Participant profiles (JSON)")->required()->check(CLI::ExistingFile);
  s->add_option("--model", sa.model, "Behaviour model (JSON); default: reference location model")
      ->check(CLI::ExistingFile);
  s->add_option("--seed", sa.seed, "Overrides the model seed");
  s->add_option("--out", sa.out, "Event log to write")->required();

  QualityArgs qa;
  auto* q = app.add_subcommand("quality", "Rank participants and flag data-quality problems");
  q->add_option("log", qa.log, "Event log")->required()->check(CLI::ExistingFile);
  q->add_option("--params", qa.params, "Quality parameters (JSON)")->check(CLI::ExistingFile);
  q->add_option("--plan", qa.plan, "Plan, needed for flags")->check(CLI::ExistingFile);
  q->add_option("--profiles", qa.profiles, "Profiles, to check sensor coverage against timelines")
      ->check(CLI::ExistingFile);
  q->add_option("--what", qa.what, "rankings, flags or all")
      ->check(CLI::IsMember({"rankings", "flags", "all"}))
      ->capture_default_str();
  add_format(q, qa.format);

  HeatmapArgs ha;
  auto* h = app.add_subcommand("heatmap", "Participant x day answer rates (CSV by default)");
  h->add_option("log", ha.log, "Event log")->required()->check(CLI::ExistingFile);
  h->add_option("--from", ha.from, "First day (default: day of the first event)");
  h->add_option("--to", ha.to, "Day after the last (default: after the last event)");
  h->add_option("--profiles", ha.profiles, "Include enrolled participants without events")->check(CLI::ExistingFile);
  add_format(h, ha.format);

  PredictArgs pa;
  auto* p = app.add_subcommand("predict", "Train and evaluate an answer-quality classifier");
  add_model_options(p, pa);
  p->add_option("--protocol", pa.protocol, "5fold, participants[:TRAIN:TEST] or participant:ID[:TRAIN:TEST]")
      ->capture_default_str();
  p->add_option("--save-model", pa.save_model, "Fit on all rows and write the model here");
  add_format(p, pa.format);

  RecommendArgs ra;
  auto* r = app.add_subcommand("recommend", "Rank weekday x day-period windows for a participant");
  add_model_options(r, ra);
  r->add_option("--participant", ra.participant, "Participant id")->required();
  r->add_option("--now", ra.now, "Also propose platform shifts for the week from this instant");
  r->add_option("--policy", ra.policy, "Revision policy (JSON) for proposed shifts")->check(CLI::ExistingFile);
  r->add_option("--indifference", ra.indifference, "Score spread treated as no preference")->capture_default_str();
  add_format(r, ra.format);

  ServeArgs sv;
  auto* srv = app.add_subcommand("serve", "Run the HTTP/JSON service");
  srv->add_option("--data-dir", sv.data_dir, "Data directory (env ILOG_DATA_DIR)");
  srv->add_option("--bind", sv.bind, "host:port (env ILOG_BIND); port 0 picks one")->capture_default_str();
  srv->add_option("--tokens", sv.tokens, "Token file (env ILOG_TOKENS)");

  std::vector<std::string> rest(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rest);
  } catch (const CLI::ParseError& ex) {
    int code = app.exit(ex, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*v) return validate(validate_path, err);
    if (*e) expand(ex, out);
    else if (*s) simulate(sa);
    else if (*q) quality_report(qa, out, err);
    else if (*h) heatmap(ha, out);
    else if (*p) predict_cmd(pa, out, err);
    else if (*r) recommend(ra, out);
    else if (*srv) return serve(sv, err);
    return 0;
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << '\n';
    return 2;
  } catch (const Error& ex) {
    err << "error [" << ex.code() << "]: " << ex.what() << '\n';
    return 1;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return 1;
  }
}

} // namespace ilog::cli
