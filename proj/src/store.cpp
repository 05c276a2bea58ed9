#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ilog/digest.hpp"
#include "ilog/errors.hpp"
#include "ilog/service.hpp"

namespace ilog::service {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

// Files ----------------------------------------------------------------------------

FileStorage::FileStorage(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

std::optional<std::string> FileStorage::read(const std::string& path) const {
  std::ifstream in(root_ / path, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

void write_all(int fd, std::string_view content, const fs::path& path) {
  while (!content.empty()) {
    auto n = ::write(fd, content.data(), content.size());
    if (n < 0) {
      ::close(fd);
      throw std::runtime_error("write failed: " + path.string());
    }
    content.remove_prefix(std::size_t(n));
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    throw std::runtime_error("fsync failed: " + path.string());
  }
  ::close(fd);
}

} // namespace

void FileStorage::write_atomic(const std::string& path, std::string_view content) {
  auto target = root_ / path;
  fs::create_directories(target.parent_path());
  auto tmp = target;
  tmp += ".tmp";
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw std::runtime_error("cannot create " + tmp.string());
  write_all(fd, content, tmp);
  fs::rename(tmp, target);
}

void FileStorage::append(const std::string& path, std::string_view content) {
  auto target = root_ / path;
  fs::create_directories(target.parent_path());
  int fd = ::open(target.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw std::runtime_error("cannot open " + target.string());
  write_all(fd, content, target);
}

void FileStorage::truncate(const std::string& path, std::uint64_t size) {
  std::error_code ec;
  fs::resize_file(root_ / path, size, ec);
  if (ec) throw std::runtime_error("cannot truncate " + (root_ / path).string() + ": " + ec.message());
}

void FileStorage::make_dir(const std::string& path) { fs::create_directories(root_ / path); }

std::vector<std::string> FileStorage::list(const std::string& dir) const {
  std::vector<std::string> out;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(root_ / dir, ec)) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

// Experiment state ------------------------------------------------------------------

struct Experiment::State {
  std::uint64_t version = 0;
  std::string plan_text;
  std::optional<cal::ExperimentPlan> plan;
  context::Cohort cohort;
  quality::QualityParameters params;
  schedule::RevisionPolicy policy;
  std::map<std::string, std::vector<schedule::AuditRecord>> records;  // per participant, in order
  std::map<std::string, schedule::Timeline> timelines;

  sim::EventLog log;
  std::map<std::string, std::uint64_t> batches;  // id -> log offset after the batch
  std::map<sim::OccurrenceKey, std::vector<std::size_t>> occurrences;
  std::vector<DetectedFlag> flags;
  std::set<std::string> flag_keys;

  std::vector<std::string> enrolled() const {
    std::vector<std::string> ids;
    for (const auto& p : cohort.profiles) ids.push_back(p.id);
    return ids;
  }
  bool is_enrolled(const std::string& pid) const {
    return std::any_of(cohort.profiles.begin(), cohort.profiles.end(),
                       [&](const context::ParticipantProfile& p) { return p.id == pid; });
  }
};

namespace {

// Complete lines of a text file; a trailing line without '\n' is a torn write.
std::vector<std::string_view> complete_lines(std::string_view text, std::size_t* complete_bytes = nullptr) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) break;
    out.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  if (complete_bytes) *complete_bytes = pos;
  return out;
}

std::string flag_key(const quality::QualityFlag& f) { return quality::flag_to_json(f).dump(); }

quality::QualityFlag flag_from_json(const nlohmann::json& j) {
  quality::QualityFlag f;
  f.participant = j.at("participant").get<std::string>();
  auto kind = j.at("kind").get<std::string>();
  for (auto k : {quality::FlagKind::MissingDay, quality::FlagKind::AnswerBurst, quality::FlagKind::ImplausibleAnswer,
                 quality::FlagKind::LocationMismatch, quality::FlagKind::SensorGap})
    if (quality::to_string(k) == kind) f.kind = k;
  f.evidence = j.at("evidence").get<std::vector<std::size_t>>();
  auto at = parse_iso(j.at("at").get<std::string>());
  if (!at) throw SchemaError("flags.log: bad instant");
  f.at = *at;
  f.detail = j.at("detail").get<std::string>();
  return f;
}

std::string plan_file(std::uint64_t version) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "plans/%06llu.ilogcal", static_cast<unsigned long long>(version));
  return buf;
}

} // namespace

Experiment::Experiment(Storage& storage, std::string id)
    : storage_(storage), id_(std::move(id)), state_(std::make_unique<State>()) {
  load();
}

void Experiment::rebuild_timelines(State& s) const {
  s.timelines.clear();
  if (!s.plan) return;
  for (const auto& p : s.cohort.profiles) {
    auto compiled = schedule::compile_one(*s.plan, p.id);
    auto it = s.records.find(p.id);
    s.timelines.emplace(p.id, it == s.records.end() ? compiled : schedule::replay(std::move(compiled), it->second));
  }
}

void Experiment::load() {
  auto& s = *state_;
  const std::string dir = id_ + "/";

  // Configuration journal.
  if (auto text = storage_.read(dir + "audit.log")) {
    std::size_t complete = 0;
    auto lines = complete_lines(*text, &complete);
    if (complete != text->size()) storage_.truncate(dir + "audit.log", complete);
    for (auto line : lines) {
      auto j = nlohmann::json::parse(line);
      auto type = j.at("type").get<std::string>();
      s.version = j.at("version").get<std::uint64_t>();
      if (type == "plan") {
        auto plan = storage_.read(dir + j.at("file").get<std::string>());
        if (!plan) throw SchemaError(id_ + ": missing " + j.at("file").get<std::string>());
        s.plan = cal::parse_plan(*plan);
        s.plan_text = *plan;
      } else if (type == "cohort") {
        s.cohort = context::cohort_from_json(j.at("cohort"));
      } else if (type == "params") {
        s.params = quality::params_from_json(j.at("params"));
      } else if (type == "policy") {
        s.policy = schedule::policy_from_json(j.at("policy"));
      } else if (type == "revision") {
        for (const auto& [pid, record] : j.at("records").items())
          s.records[pid].push_back(schedule::audit_from_json(record));
      } else {
        throw SchemaError(id_ + "/audit.log: unknown record type " + type);
      }
    }
  }
  rebuild_timelines(s);

  // Event log, cut back to the last committed batch.
  std::uint64_t committed = 0;
  if (auto text = storage_.read(dir + "batches.log")) {
    std::size_t complete = 0;
    auto lines = complete_lines(*text, &complete);
    if (complete != text->size()) storage_.truncate(dir + "batches.log", complete);
    for (auto line : lines) {
      auto j = nlohmann::json::parse(line);
      committed = j.at("offset").get<std::uint64_t>();
      s.batches[j.at("batch").get<std::string>()] = committed;
    }
  }
  if (auto text = storage_.read(dir + "events.log")) {
    auto lines = complete_lines(*text);
    if (lines.size() < committed + 1) throw SchemaError(id_ + "/events.log is shorter than its committed batches");
    std::size_t keep = 0;
    for (std::size_t i = 0; i < committed + 1; ++i) keep += lines[i].size() + 1;
    if (keep != text->size()) storage_.truncate(dir + "events.log", keep);
    s.log = sim::read_event_log(std::string_view(*text).substr(0, keep));
  } else if (committed > 0) {
    throw SchemaError(id_ + ": batches.log without events.log");
  }
  for (std::size_t i = 0; i < s.log.size(); ++i)
    if (auto k = sim::key_of(s.log[i])) s.occurrences[*k].push_back(i);
  size_ = s.log.size();

  // Flags already reported. A crash between committing a batch and checking
  // it leaves the checked marker behind; the check then runs now, at the same
  // offset it would have run at.
  std::uint64_t checked = 0;
  if (auto text = storage_.read(dir + "flags.log")) {
    std::size_t complete = 0;
    auto lines = complete_lines(*text, &complete);
    if (complete != text->size()) storage_.truncate(dir + "flags.log", complete);
    for (auto line : lines) {
      auto j = nlohmann::json::parse(line);
      if (j.contains("checked")) {
        checked = j.at("checked").get<std::uint64_t>();
        continue;
      }
      DetectedFlag d{j.at("offset").get<std::uint64_t>(), flag_from_json(j.at("flag"))};
      s.flag_keys.insert(flag_key(d.flag));
      s.flags.push_back(std::move(d));
    }
  }
  if (checked != s.log.size()) detect_flags(s);
}

std::uint64_t Experiment::journal(State& s, ojson entry) {
  ojson line{{"version", s.version + 1}};
  for (auto& [k, v] : entry.items()) line[k] = std::move(v);
  storage_.append(id_ + "/audit.log", line.dump() + "\n");
  return ++s.version;
}

void Experiment::detect_flags(State& s) {
  if (!s.plan) return;
  std::string lines;
  for (auto& f : quality::run_quality_checks(s.log, *s.plan, &s.timelines)) {
    auto key = flag_key(f);
    if (!s.flag_keys.insert(key).second) continue;
    DetectedFlag d{s.log.size(), std::move(f)};
    lines += ojson{{"offset", d.offset}, {"flag", quality::flag_to_json(d.flag)}}.dump() + "\n";
    s.flags.push_back(std::move(d));
  }
  lines += ojson{{"checked", s.log.size()}}.dump() + "\n";
  storage_.append(id_ + "/flags.log", lines);
}

bool Experiment::has_plan() const {
  std::shared_lock lock(mutex_);
  return state_->plan.has_value();
}

// Writers ------------------------------------------------------------------------------

std::uint64_t Experiment::put_plan(const std::string& text, Instant issued_at) {
  auto plan = cal::parse_plan(text);
  std::unique_lock lock(mutex_);
  auto& s = *state_;
  State next_view;  // timelines under the new plan, checked before anything is written
  next_view.plan = plan;
  next_view.cohort = s.cohort;
  next_view.records = s.records;
  rebuild_timelines(next_view);

  auto file = plan_file(s.version + 1);
  storage_.make_dir(id_ + "/plans");
  storage_.write_atomic(id_ + "/" + file, text);
  storage_.write_atomic(id_ + "/plan.ilogcal", text);
  auto v = journal(s, {{"type", "plan"}, {"at", format_iso(issued_at)}, {"file", file}});
  s.plan = std::move(plan);
  s.plan_text = text;
  s.timelines = std::move(next_view.timelines);
  return v;
}

std::uint64_t Experiment::put_cohort(const context::Cohort& cohort, Instant issued_at) {
  std::unique_lock lock(mutex_);
  auto& s = *state_;
  State next_view;
  next_view.plan = s.plan;
  next_view.cohort = cohort;
  next_view.records = s.records;
  rebuild_timelines(next_view);
  auto v = journal(s, {{"type", "cohort"}, {"at", format_iso(issued_at)}, {"cohort", context::cohort_to_json(cohort)}});
  s.cohort = cohort;
  s.timelines = std::move(next_view.timelines);
  return v;
}

std::uint64_t Experiment::put_params(const quality::QualityParameters& params, Instant issued_at) {
  quality::check_params(params);
  std::unique_lock lock(mutex_);
  auto v = journal(*state_, {{"type", "params"}, {"at", format_iso(issued_at)}, {"params", quality::params_to_json(params)}});
  state_->params = params;
  return v;
}

std::uint64_t Experiment::put_policy(const schedule::RevisionPolicy& policy, Instant issued_at) {
  std::unique_lock lock(mutex_);
  auto v = journal(*state_, {{"type", "policy"}, {"at", format_iso(issued_at)}, {"policy", schedule::policy_to_json(policy)}});
  state_->policy = policy;
  return v;
}

IngestAck Experiment::ingest(const std::string& batch_id, const sim::EventLog& batch) {
  if (batch_id.empty()) throw SchemaError("events: batch_id is required");
  if (batch_id.find_first_of("\r\n") != std::string::npos) throw SchemaError("events: batch_id contains a line break");
  std::uint64_t offset = 0;
  {
    std::unique_lock lock(mutex_);
    auto& s = *state_;
    if (auto it = s.batches.find(batch_id); it != s.batches.end()) return {it->second, 0, true};

    std::set<sim::OccurrenceKey> touched;
    std::map<std::string, Instant> last;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& e = batch[i];
      if (e.participant.empty()) throw SchemaError("events[" + std::to_string(i) + "]: participant is empty");
      if (!s.cohort.profiles.empty() && !s.is_enrolled(e.participant))
        throw SchemaError("events[" + std::to_string(i) + "]: participant " + e.participant + " is not enrolled");
      if (auto k = sim::key_of(e)) touched.insert(*k);
    }
    // Lifecycle order per occurrence, including what earlier batches stored.
    sim::EventLog check;
    for (const auto& k : touched)
      if (auto it = s.occurrences.find(k); it != s.occurrences.end())
        for (auto i : it->second) check.push_back(s.log[i]);
    for (const auto& e : batch)
      if (auto k = sim::key_of(e); k && touched.contains(*k)) check.push_back(e);
    try {
      (void)sim::derive_timings(check, true);
    } catch (const LifecycleError& e) {
      throw SchemaError(std::string("events: lifecycle violation at ") + e.what());
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& e = batch[i];
      auto [it, fresh] = last.try_emplace(e.participant, e.at);
      if (!fresh && e.at < it->second)
        throw SchemaError("events[" + std::to_string(i) + "]: " + e.participant + " at " + format_iso(e.at) +
                          " is earlier than the previous event at " + format_iso(it->second));
      it->second = e.at;
    }

    std::string text;
    if (s.log.empty() && !storage_.read(id_ + "/events.log")) text = sim::write_event_log({});
    for (const auto& e : batch) text += sim::event_to_json(e).dump() + "\n";
    storage_.append(id_ + "/events.log", text);
    offset = s.log.size() + batch.size();
    storage_.append(id_ + "/batches.log", ojson{{"batch", batch_id}, {"offset", offset}, {"count", batch.size()}}.dump() + "\n");

    for (const auto& e : batch) {
      if (auto k = sim::key_of(e)) s.occurrences[*k].push_back(s.log.size());
      s.log.push_back(e);
    }
    s.batches[batch_id] = offset;
    detect_flags(s);
    size_ = offset;
  }
  {
    std::lock_guard lock(wait_mutex_);
  }
  grew_.notify_all();
  return {offset, batch.size(), false};
}

RevisionAck Experiment::revise(const schedule::Revision& rev) {
  std::unique_lock lock(mutex_);
  auto& s = *state_;
  if (!s.plan) throw NotFound(id_ + ": no plan");
  std::vector<std::string> targets;
  if (rev.participant.empty()) {
    if (rev.actor != schedule::Actor::Researcher)
      throw ValidationError("revision.participant", "only the researcher may revise every participant at once");
    targets = s.enrolled();
  } else {
    if (!s.timelines.contains(rev.participant)) throw NotFound("participant " + rev.participant + " is not enrolled");
    targets = {rev.participant};
  }
  std::map<std::string, schedule::Timeline> next;
  ojson records = ojson::object();
  RevisionAck ack;
  for (const auto& pid : targets) {
    auto own = rev;
    own.participant = pid;
    auto tl = schedule::apply_revision(s.timelines.at(pid), own, s.policy);
    ack.affected += tl.audit.back().affected;
    records[pid] = schedule::audit_to_json(tl.audit.back());
    next.emplace(pid, std::move(tl));
  }
  ack.version = journal(s, {{"type", "revision"}, {"at", format_iso(rev.issued_at)}, {"records", records}});
  for (auto& [pid, tl] : next) {
    s.records[pid].push_back(tl.audit.back());
    s.timelines[pid] = std::move(tl);
    ack.participants.push_back(pid);
  }
  return ack;
}

// Readers ---------------------------------------------------------------------------------

std::uint64_t Experiment::version() const {
  std::shared_lock lock(mutex_);
  return state_->version;
}
std::uint64_t Experiment::offset() const { return size_; }
std::string Experiment::plan_text() const {
  std::shared_lock lock(mutex_);
  return state_->plan_text;
}
context::Cohort Experiment::cohort() const {
  std::shared_lock lock(mutex_);
  return state_->cohort;
}
quality::QualityParameters Experiment::params() const {
  std::shared_lock lock(mutex_);
  return state_->params;
}
schedule::RevisionPolicy Experiment::policy() const {
  std::shared_lock lock(mutex_);
  return state_->policy;
}
std::optional<schedule::Timeline> Experiment::timeline(const std::string& participant) const {
  std::shared_lock lock(mutex_);
  auto it = state_->timelines.find(participant);
  if (it == state_->timelines.end()) return std::nullopt;
  return it->second;
}

quality::SummaryInput Experiment::summary_input(const State& s) const {
  quality::SummaryInput in;
  in.log = &s.log;
  in.plan = s.plan ? &*s.plan : nullptr;
  in.timelines = &s.timelines;
  in.params = s.params;
  in.enrolled = s.enrolled();
  in.offset = s.log.size();
  return in;
}

namespace {

ojson summary_of(const Experiment::State& s, const quality::SummaryInput& in, const std::string& id,
                 const quality::Viewer& viewer, const std::string& slice) {
  if (!viewer.researcher && !s.is_enrolled(viewer.participant))
    throw AuthorizationError("participant " + viewer.participant + " is not enrolled in " + id);
  auto out = quality::dashboard_summary(in, viewer, slice);
  out["version"] = s.version;
  return out;
}

std::vector<quality::ParticipantRanking> rankings_of(const Experiment::State& s) {
  auto ranked = quality::rank_all(s.log, s.params);
  // Enrolled participants without any event yet are ranked from zero counts.
  Instant as_of{};
  for (const auto& e : s.log) as_of = std::max(as_of, e.at);
  for (const auto& pid : s.enrolled())
    if (std::none_of(ranked.begin(), ranked.end(), [&](const auto& r) { return r.participant == pid; }))
      ranked.push_back(quality::rank_participant({pid, 0, 0, 0, {}, {}}, s.params, as_of));
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.participant < b.participant; });
  return ranked;
}

} // namespace

ojson Experiment::summary(const quality::Viewer& viewer, const std::string& slice) const {
  std::shared_lock lock(mutex_);
  return summary_of(*state_, summary_input(*state_), id_, viewer, slice);
}

quality::Heatmap Experiment::heatmap(std::optional<Instant> from, std::optional<Instant> to) const {
  std::shared_lock lock(mutex_);
  const auto& s = *state_;
  Instant lo = Instant::max(), hi = Instant::min();
  for (const auto& e : s.log) lo = std::min(lo, e.at), hi = std::max(hi, e.at);
  if (s.log.empty() && s.plan) {
    for (const auto& c : s.plan->calendars)
      for (const auto& ctx : c.contexts)
        for (const auto& q : ctx.questions) lo = std::min(lo, q.dtstart), hi = std::max(hi, q.dtstart);
  }
  if (lo == Instant::max()) lo = hi = Instant{};
  Instant f = from.value_or(floor_day(lo));
  Instant t = to.value_or(floor_day(hi) + kDay);
  if (t < f) throw ValidationError("heatmap", "'to' is before 'from'");
  if (t - f > 3660 * kDay) throw ValidationError("heatmap", "range longer than ten years");
  return quality::compliance_heatmap(s.log, f, t, s.enrolled());
}

std::vector<quality::ParticipantRanking> Experiment::rankings() const {
  std::shared_lock lock(mutex_);
  return rankings_of(*state_);
}

std::vector<DetectedFlag> Experiment::flags() const {
  std::shared_lock lock(mutex_);
  return state_->flags;
}

ojson Experiment::participant_data(const std::string& participant, std::optional<Instant> from,
                                   std::optional<Instant> to) const {
  std::shared_lock lock(mutex_);
  const auto& s = *state_;
  if (!s.is_enrolled(participant)) throw NotFound("participant " + participant + " is not enrolled");
  std::map<schedule::SourceRef, const cal::QuestionCollection*> questions;
  if (s.plan)
    for (const auto& c : s.plan->calendars)
      for (const auto& ctx : c.contexts)
        for (const auto& q : ctx.questions) questions[{c.id, ctx.id, q.cid, schedule::SourceKind::Question}] = &q;

  sim::EventLog own;
  for (const auto& e : s.log)
    if (e.participant == participant) own.push_back(e);
  auto timings = sim::derive_timings(own, false);

  std::map<std::int64_t, ojson> days;
  std::map<std::int64_t, std::int64_t> readings;
  auto in_range = [&](Instant t) { return (!from || t >= *from) && (!to || t < *to); };
  for (const auto& e : own) {
    if (!in_range(e.at)) continue;
    if (e.is_reading()) {
      ++readings[day_index(e.at)];
      continue;
    }
    if (e.kind != sim::EventKind::AnswerStored) continue;
    ojson a{{"at", format_iso(e.at)}, {"source", schedule::to_string(e.source)}, {"seq", e.seq_no.value_or(0)}};
    if (auto q = questions.find(e.source); q != questions.end()) {
      a["category"] = cal::to_string(q->second->question.category);
      a["question"] = q->second->question.content;
    }
    a["value"] = e.value.value_or("");
    if (auto t = timings.find(*sim::key_of(e)); t != timings.end()) {
      a["reaction_ms"] = t->second.reaction ? ojson(t->second.reaction->count()) : ojson(nullptr);
      a["completion_ms"] = t->second.completion ? ojson(t->second.completion->count()) : ojson(nullptr);
    }
    auto& day = days[day_index(e.at)];
    if (day.is_null()) day = ojson::array();
    day.push_back(std::move(a));
  }
  for (const auto& [d, n] : readings)
    if (!days.contains(d)) days[d] = ojson::array();
  ojson out_days = ojson::array();
  for (auto& [d, answers] : days) {
    out_days.push_back({{"date", format_date(Instant{} + d * kDay)},
                        {"answers", std::move(answers)},
                        {"sensor_readings", readings.contains(d) ? readings.at(d) : 0}});
  }
  return {{"participant", participant}, {"offset", s.log.size()}, {"days", std::move(out_days)}};
}

ojson Experiment::compare(const std::vector<std::string>& participants) const {
  std::shared_lock lock(mutex_);
  const auto& s = *state_;
  if (participants.empty()) throw ValidationError("compare.pids", "no participants given");
  for (const auto& p : participants)
    if (!s.is_enrolled(p)) throw NotFound("participant " + p + " is not enrolled");
  std::int64_t first = 0, last = -1;
  if (!s.log.empty()) {
    first = last = day_index(s.log.front().at);
    for (const auto& e : s.log) first = std::min(first, day_index(e.at)), last = std::max(last, day_index(e.at));
  }
  ojson dates = ojson::array();
  for (auto d = first; d <= last; ++d) dates.push_back(format_date(Instant{} + d * kDay));

  ojson series = ojson::array();
  for (const auto& pid : participants) {
    sim::EventLog own;
    for (const auto& e : s.log)
      if (e.participant == pid) own.push_back(e);
    auto timings = sim::derive_timings(own, false);
    std::map<std::int64_t, std::int64_t> answers;
    std::map<std::int64_t, std::pair<std::int64_t, std::int64_t>> reaction;  // sum ms, count
    for (const auto& [k, t] : timings) {
      if (!t.stored) continue;
      auto d = day_index(*t.stored);
      ++answers[d];
      if (t.reaction) {
        reaction[d].first += t.reaction->count();
        ++reaction[d].second;
      }
    }
    ojson cumulative = ojson::array(), mean_reaction = ojson::array();
    std::int64_t total = 0;
    for (auto d = first; d <= last; ++d) {
      total += answers.contains(d) ? answers.at(d) : 0;
      cumulative.push_back(total);
      auto r = reaction.find(d);
      mean_reaction.push_back(r == reaction.end() ? ojson(nullptr)
                                                  : ojson(double(r->second.first) / double(r->second.second) / 1000.0));
    }
    series.push_back({{"participant", pid}, {"cumulative_answers", std::move(cumulative)},
                      {"mean_reaction_s", std::move(mean_reaction)}});
  }
  return {{"offset", s.log.size()}, {"dates", std::move(dates)}, {"series", std::move(series)}};
}

StreamPage Experiment::stream(std::uint64_t from, const quality::Viewer& viewer, std::size_t limit) const {
  std::shared_lock lock(mutex_);
  const auto& s = *state_;
  if (from > s.log.size())
    throw ValidationError("stream.offset", "offset " + std::to_string(from) + " is past the end of the log (" +
                                                std::to_string(s.log.size()) + ")");
  auto visible = [&](const std::string& pid) { return viewer.researcher || pid == viewer.participant; };
  StreamPage page;
  std::uint64_t end = std::min<std::uint64_t>(s.log.size(), from + limit);
  page.next_offset = end;
  // A flag detected at offset d follows the event at d - 1.
  std::vector<const DetectedFlag*> flags;
  for (const auto& f : s.flags)
    if (f.offset > from && f.offset <= end && visible(f.flag.participant)) flags.push_back(&f);
  std::sort(flags.begin(), flags.end(), [](auto* a, auto* b) { return a->offset < b->offset; });
  auto fl = flags.begin();
  for (auto i = from; i < end; ++i) {
    if (visible(s.log[i].participant))
      page.records.push_back({{"offset", i}, {"type", "event"}, {"event", sim::event_to_json(s.log[i])}});
    for (; fl != flags.end() && (*fl)->offset == i + 1; ++fl)
      page.records.push_back({{"offset", (*fl)->offset}, {"type", "flag"}, {"flag", quality::flag_to_json((*fl)->flag)}});
  }
  return page;
}

void Experiment::wait_past(std::uint64_t offset, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(wait_mutex_);
  grew_.wait_for(lock, timeout, [&] { return size_.load() > offset; });
}

ojson Experiment::snapshot() {
  std::shared_lock lock(mutex_);
  const auto& s = *state_;
  ojson ranked = ojson::array();
  for (const auto& r : rankings_of(s)) ranked.push_back(quality::ranking_to_json(r));
  ojson flagged = ojson::array();
  for (const auto& f : s.flags) flagged.push_back({{"offset", f.offset}, {"flag", quality::flag_to_json(f.flag)}});
  ojson snap{{"offset", s.log.size()},
             {"version", s.version},
             {"summary", summary_of(s, summary_input(s), id_, {true, {}}, {})},
             {"rankings", std::move(ranked)},
             {"flags", std::move(flagged)}};
  auto name = id_ + "/snapshots/" + std::to_string(s.log.size()) + "-v" + std::to_string(s.version) + ".json";
  std::lock_guard files(snapshot_mutex_);
  if (!storage_.read(name)) {
    storage_.make_dir(id_ + "/snapshots");
    storage_.write_atomic(name, snap.dump(2) + "\n");
  }
  return snap;
}

std::string Experiment::state_digest() const {
  std::shared_lock lock(mutex_);
  const auto& s = *state_;
  std::string text = summary_of(s, summary_input(s), id_, {true, {}}, {}).dump();
  for (const auto& r : rankings_of(s)) text += quality::ranking_to_json(r).dump();
  for (const auto& f : s.flags) text += std::to_string(f.offset) + quality::flag_to_json(f.flag).dump();
  for (const auto& [pid, tl] : s.timelines) text += schedule::export_records(tl);
  text += "version=" + std::to_string(s.version);
  return hex_digest(text);
}

// Store ------------------------------------------------------------------------------------

namespace {

void check_experiment_id(const std::string& id) {
  if (id.empty() || id.size() > 128 || id.front() == '.' ||
      !std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum((unsigned char)c) || c == '-' || c == '_' || c == '.'; }))
    throw NotFound("no experiment '" + id + "'");
}

} // namespace

Store::Store(fs::path data_dir) : storage_(data_dir), root_(std::move(data_dir)) {}

std::shared_ptr<Experiment> Store::open(const std::string& id) {
  check_experiment_id(id);
  std::lock_guard lock(mutex_);
  auto& slot = open_[id];
  if (!slot) slot = std::make_shared<Experiment>(storage_, id);
  return slot;
}

std::shared_ptr<Experiment> Store::get(const std::string& id) {
  check_experiment_id(id);
  {
    std::lock_guard lock(mutex_);
    if (auto it = open_.find(id); it != open_.end() && it->second->has_plan()) return it->second;
  }
  if (!fs::exists(root_ / id / "audit.log")) throw NotFound("no experiment '" + id + "'");
  auto e = open(id);
  if (!e->has_plan()) throw NotFound("experiment '" + id + "' has no plan");
  return e;
}

} // namespace ilog::service
