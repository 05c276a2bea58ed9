#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "ilog/context.hpp"
#include "ilog/ilogcal.hpp"
#include "ilog/quality.hpp"
#include "ilog/schedule.hpp"
#include "ilog/sim.hpp"

// Experiment store and HTTP/JSON service. The event log and the audit log are
// the source of truth; timelines, summaries, rankings and flags are rebuilt
// from them on start.
namespace ilog::service {

// Principals ---------------------------------------------------------------------

enum class RoleKind { Researcher, Participant, Platform };
std::string_view to_string(RoleKind k);

struct Role {
  std::string principal;
  RoleKind kind = RoleKind::Researcher;
  std::string participant;  // bound participant id, Participant roles only
};

/// Bearer token -> Role. File format:
///   {"tokens": {"<token>": {"principal": "ana", "role": "researcher"},
///               "<token>": {"principal": "p1", "role": "participant", "participant": "p1"}}}
class TokenTable {
public:
  TokenTable() = default;
  /// Throws ValidationError for malformed entries or participant roles
  /// without a participant id.
  static TokenTable from_json(const nlohmann::json& j);
  static TokenTable load(const std::filesystem::path& file);
  void add(std::string token, Role role);
  const Role* find(const std::string& token) const;

private:
  std::map<std::string, Role> tokens_;
};

// Storage ------------------------------------------------------------------------

/// The file operations the store relies on. Paths are relative to the root.
class Storage {
public:
  virtual ~Storage() = default;
  virtual std::optional<std::string> read(const std::string& path) const = 0;
  /// Replaces the file as a whole (write to a temporary, then rename).
  virtual void write_atomic(const std::string& path, std::string_view content) = 0;
  /// Appends and flushes to stable storage before returning.
  virtual void append(const std::string& path, std::string_view content) = 0;
  virtual void truncate(const std::string& path, std::uint64_t size) = 0;
  virtual void make_dir(const std::string& path) = 0;
  /// Names of the entries of a directory, sorted; empty when it does not exist.
  virtual std::vector<std::string> list(const std::string& dir) const = 0;
};

class FileStorage final : public Storage {
public:
  explicit FileStorage(std::filesystem::path root);
  std::optional<std::string> read(const std::string& path) const override;
  void write_atomic(const std::string& path, std::string_view content) override;
  void append(const std::string& path, std::string_view content) override;
  void truncate(const std::string& path, std::uint64_t size) override;
  void make_dir(const std::string& path) override;
  std::vector<std::string> list(const std::string& dir) const override;

private:
  std::filesystem::path root_;
};

// Experiments --------------------------------------------------------------------

struct IngestAck {
  std::uint64_t offset = 0;  // log size after the batch
  std::uint64_t accepted = 0;
  bool duplicate = false;  // batch id seen before: nothing appended
};

struct RevisionAck {
  std::uint64_t version = 0;
  std::uint64_t affected = 0;
  std::vector<std::string> participants;  // timelines touched
};

/// A flag and the log offset at which it was first detected.
struct DetectedFlag {
  std::uint64_t offset = 0;
  quality::QualityFlag flag;
};

struct StreamPage {
  nlohmann::ordered_json records = nlohmann::ordered_json::array();
  std::uint64_t next_offset = 0;
};

/// One experiment directory:
///   plan.ilogcal     current plan (plans/<version>.ilogcal keeps every one)
///   audit.log        one JSON record per configuration change (plan, cohort,
///                    revision, quality parameters, policy), numbered by version
///   events.log       event log (schema header + one event per line)
///   batches.log      committed ingest batches: id and log offset after it
///   flags.log        quality flags with the offset they were detected at
///   snapshots/       summaries and rankings, keyed by offset and version
/// Writers are serialized per experiment; readers run concurrently.
class Experiment {
public:
  /// Loads and replays an existing directory, or starts an empty one.
  Experiment(Storage& storage, std::string id);

  const std::string& id() const { return id_; }
  bool has_plan() const;

  // Writers.
  /// Parses, validates and stores the plan, then replays every timeline's
  /// revisions on it. Returns the new version.
  std::uint64_t put_plan(const std::string& text, Instant issued_at);
  std::uint64_t put_cohort(const context::Cohort& cohort, Instant issued_at);
  std::uint64_t put_params(const quality::QualityParameters& params, Instant issued_at);
  std::uint64_t put_policy(const schedule::RevisionPolicy& policy, Instant issued_at);
  /// Appends a batch. Throws SchemaError for lifecycle violations (citing the
  /// occurrence), timestamps going backwards for a participant, or unknown
  /// participants. A repeated batch id is acknowledged without appending.
  IngestAck ingest(const std::string& batch_id, const sim::EventLog& batch);
  /// Applies the revision to the named participant's timeline, or to every
  /// enrolled participant when the researcher leaves it empty. All or nothing.
  RevisionAck revise(const schedule::Revision& rev);

  // Readers.
  std::uint64_t version() const;
  std::uint64_t offset() const;
  std::string plan_text() const;
  context::Cohort cohort() const;
  quality::QualityParameters params() const;
  schedule::RevisionPolicy policy() const;
  std::optional<schedule::Timeline> timeline(const std::string& participant) const;
  nlohmann::ordered_json summary(const quality::Viewer& viewer, const std::string& slice = {}) const;
  quality::Heatmap heatmap(std::optional<Instant> from, std::optional<Instant> to) const;
  std::vector<quality::ParticipantRanking> rankings() const;
  std::vector<DetectedFlag> flags() const;
  /// Answers of one participant, grouped by UTC day.
  nlohmann::ordered_json participant_data(const std::string& participant, std::optional<Instant> from,
                                          std::optional<Instant> to) const;
  /// Cumulative answers and mean reaction time per day for each participant.
  nlohmann::ordered_json compare(const std::vector<std::string>& participants) const;
  /// Events and flags from `from`, in offset order. A participant viewer gets
  /// only their own events and flags.
  StreamPage stream(std::uint64_t from, const quality::Viewer& viewer, std::size_t limit) const;
  /// Blocks until the log grows past `offset` or the timeout passes.
  void wait_past(std::uint64_t offset, std::chrono::milliseconds timeout) const;
  /// Researcher summary, rankings and flags at the current offset, written to
  /// snapshots/ when new. Returns the snapshot.
  nlohmann::ordered_json snapshot();
  /// Digest of the derived state (summary, rankings, flags, timelines, version).
  std::string state_digest() const;

  struct State;

private:
  void load();
  void rebuild_timelines(State& s) const;
  std::uint64_t journal(State& s, nlohmann::ordered_json entry);
  void detect_flags(State& s);
  quality::SummaryInput summary_input(const State& s) const;

  Storage& storage_;
  std::string id_;
  mutable std::shared_mutex mutex_;
  mutable std::mutex wait_mutex_;
  std::mutex snapshot_mutex_;
  mutable std::condition_variable grew_;
  std::atomic<std::uint64_t> size_{0};  // log size, readable without the state lock
  std::unique_ptr<State> state_;
};

/// Experiment directories under a data directory, opened on first use.
class Store {
public:
  explicit Store(std::filesystem::path data_dir);
  /// Throws NotFound unless the experiment exists (has a plan).
  std::shared_ptr<Experiment> get(const std::string& id);
  /// Opens or creates the experiment directory.
  std::shared_ptr<Experiment> open(const std::string& id);

private:
  FileStorage storage_;
  std::filesystem::path root_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Experiment>> open_;
};

// HTTP ---------------------------------------------------------------------------

struct Request {
  std::string method;
  std::string path;
  std::multimap<std::string, std::string> query;
  std::string body;
  std::string authorization;  // raw Authorization header
};

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// JSON problem record: {"code", "status", "title", "detail"}. The code is
/// the error's stable identifier.
Response problem(int status, const std::string& code, const std::string& detail);

class Service {
public:
  Service(std::filesystem::path data_dir, TokenTable tokens);
  /// Routes one request. Never throws: errors become problem records.
  Response handle(const Request& req);
  /// Wall clock used for issued_at of configuration changes; replaceable in tests.
  std::function<Instant()> clock;

private:
  Response route(const Request& req, const Role& role);
  Store store_;
  TokenTable tokens_;
};

/// Serves until stop() is called on the returned handle or the process ends.
/// bind is "host:port"; port 0 picks a free port.
class Server {
public:
  Server(Service& service, const std::string& bind);
  ~Server();
  int port() const { return port_; }
  /// Blocks serving requests.
  void run();
  void stop();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

} // namespace ilog::service
