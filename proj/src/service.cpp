#include <httplib.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "ilog/errors.hpp"
#include "ilog/service.hpp"

namespace ilog::service {

using ojson = nlohmann::ordered_json;

std::string_view to_string(RoleKind k) {
  switch (k) {
  case RoleKind::Researcher: return "researcher";
  case RoleKind::Participant: return "participant";
  case RoleKind::Platform: return "platform";
  }
  return "?";
}

// Tokens ------------------------------------------------------------------------------

TokenTable TokenTable::from_json(const nlohmann::json& j) {
  TokenTable t;
  try {
    for (const auto& [token, entry] : j.at("tokens").items()) {
      Role r;
      r.principal = entry.value("principal", "");
      auto role = entry.at("role").get<std::string>();
      if (role == "researcher") r.kind = RoleKind::Researcher;
      else if (role == "platform") r.kind = RoleKind::Platform;
      else if (role == "participant") {
        r.kind = RoleKind::Participant;
        r.participant = entry.value("participant", "");
        if (r.participant.empty()) throw ValidationError("tokens." + r.principal, "participant role without a participant id");
      } else {
        throw ValidationError("tokens." + r.principal, "unknown role '" + role + "'");
      }
      if (token.empty()) throw ValidationError("tokens", "empty token");
      t.add(token, std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("tokens", e.what());
  }
  return t;
}

TokenTable TokenTable::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw NotFound("token file " + file.string() + " not found");
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("tokens", e.what());
  }
}

void TokenTable::add(std::string token, Role role) { tokens_[std::move(token)] = std::move(role); }

const Role* TokenTable::find(const std::string& token) const {
  auto it = tokens_.find(token);
  return it == tokens_.end() ? nullptr : &it->second;
}

// Problems ------------------------------------------------------------------------------

Response problem(int status, const std::string& code, const std::string& detail) {
  static const std::map<int, std::string> kTitles{{400, "Bad Request"},          {401, "Unauthorized"},
                                                  {403, "Forbidden"},            {404, "Not Found"},
                                                  {405, "Method Not Allowed"},   {409, "Conflict"},
                                                  {422, "Unprocessable Entity"}, {500, "Internal Server Error"}};
  auto title = kTitles.contains(status) ? kTitles.at(status) : "Error";
  ojson body{{"code", code}, {"status", status}, {"title", title}, {"detail", detail}};
  return {status, "application/problem+json", body.dump()};
}

namespace {

int status_for(const std::string& code) {
  static const std::map<std::string, int> kStatus{
      {"unauthorized", 403},     {"role_mismatch", 403},    {"not_found", 404},     {"schema", 400},
      {"syntax", 400},           {"validation", 422},       {"duplicate_id", 422},  {"overflow", 422},
      {"lifecycle", 400},        {"policy_violation", 409}, {"immutable_past", 409}, {"degenerate_data", 422},
      {"coverage", 422},         {"overlap", 422},          {"order", 422},         {"dangling_edge", 422}};
  auto it = kStatus.find(code);
  return it == kStatus.end() ? 500 : it->second;
}

Response json_response(const ojson& j, int status = 200) { return {status, "application/json", j.dump()}; }

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto next = s.find(sep, pos);
    if (next == std::string_view::npos) next = s.size();
    out.emplace_back(s.substr(pos, next - pos));
    pos = next + 1;
  }
  return out;
}

std::optional<std::string> query(const Request& r, const std::string& key) {
  auto it = r.query.find(key);
  if (it == r.query.end()) return std::nullopt;
  return it->second;
}

std::optional<Instant> query_instant(const Request& r, const std::string& key) {
  auto v = query(r, key);
  if (!v || v->empty()) return std::nullopt;
  if (auto t = parse_iso(*v)) return t;
  if (auto t = parse_date(*v)) return t;
  throw ValidationError("query." + key, "expected YYYY-MM-DD or an ISO-8601 UTC instant");
}

std::uint64_t query_uint(const Request& r, const std::string& key, std::uint64_t fallback) {
  auto v = query(r, key);
  if (!v) return fallback;
  std::uint64_t out = 0;
  auto res = std::from_chars(v->data(), v->data() + v->size(), out);
  if (v->empty() || res.ec != std::errc{} || res.ptr != v->data() + v->size())
    throw ValidationError("query." + key, "expected a non-negative integer");
  return out;
}

nlohmann::json parse_body(const Request& r) {
  try {
    return nlohmann::json::parse(r.body);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("request body is not JSON: ") + e.what());
  }
}

quality::Viewer viewer_of(const Role& role) {
  return role.kind == RoleKind::Participant ? quality::Viewer{false, role.participant} : quality::Viewer{true, {}};
}

void require(const Role& role, std::initializer_list<RoleKind> allowed, const std::string& what) {
  if (std::find(allowed.begin(), allowed.end(), role.kind) == allowed.end())
    throw AuthorizationError(std::string(to_string(role.kind)) + " may not " + what);
}

// A participant may only name themselves.
void require_self(const Role& role, const std::string& participant) {
  if (role.kind == RoleKind::Participant && participant != role.participant)
    throw AuthorizationError("participant " + role.participant + " may not access data of " + participant);
}

struct MethodNotAllowed {};

} // namespace

// Routing ---------------------------------------------------------------------------------

Service::Service(std::filesystem::path data_dir, TokenTable tokens)
    : clock([] { return std::chrono::time_point_cast<Duration>(std::chrono::system_clock::now()); }),
      store_(std::move(data_dir)),
      tokens_(std::move(tokens)) {}

Response Service::handle(const Request& req) {
  try {
    if (req.method == "GET" && req.path == "/health") return json_response({{"status", "ok"}});
    static constexpr std::string_view kBearer = "Bearer ";
    if (req.authorization.rfind(kBearer, 0) != 0)
      return problem(401, "unauthenticated", "missing bearer token");
    const Role* role = tokens_.find(req.authorization.substr(kBearer.size()));
    if (!role) return problem(401, "unauthenticated", "unknown bearer token");
    return route(req, *role);
  } catch (const MethodNotAllowed&) {
    return problem(405, "method_not_allowed", req.method + " is not supported on " + req.path);
  } catch (const Error& e) {
    return problem(status_for(e.code()), e.code(), e.what());
  } catch (const std::exception& e) {
    return problem(500, "internal", e.what());
  }
}

Response Service::route(const Request& req, const Role& role) {
  auto parts = split(req.path, '/');
  // "", "experiments", id, resource...
  if (parts.size() < 4 || !parts[0].empty() || parts[1] != "experiments")
    throw NotFound("no route for " + req.path);
  const std::string& id = parts[2];
  const std::string& resource = parts[3];
  const auto& m = req.method;
  auto viewer = viewer_of(role);

  if (parts.size() == 4 && resource == "plan") {
    if (m == "GET") return {200, "text/calendar", store_.get(id)->plan_text()};
    if (m != "PUT") throw MethodNotAllowed{};
    require(role, {RoleKind::Researcher}, "change the plan");
    auto exp = store_.open(id);
    auto version = exp->put_plan(req.body, clock());
    ojson warnings = ojson::array();
    for (const auto& d : cal::lint_plan(req.body))
      warnings.push_back({{"path", d.path}, {"code", d.code}, {"message", d.message}});
    return json_response({{"version", version}, {"warnings", std::move(warnings)}});
  }

  auto exp = store_.get(id);

  if (parts.size() == 4 && resource == "policy") {
    if (m == "GET") return json_response(schedule::policy_to_json(exp->policy()));
    if (m != "PUT") throw MethodNotAllowed{};
    require(role, {RoleKind::Researcher}, "change the revision policy");
    auto v = exp->put_policy(schedule::policy_from_json(parse_body(req)), clock());
    return json_response({{"version", v}});
  }

  if (parts.size() == 4 && resource == "participants") {
    if (m == "GET") {
      auto cohort = exp->cohort();
      if (role.kind == RoleKind::Participant)
        std::erase_if(cohort.profiles, [&](const auto& p) { return p.id != role.participant; });
      return json_response(context::cohort_to_json(cohort));
    }
    if (m != "PUT") throw MethodNotAllowed{};
    require(role, {RoleKind::Researcher}, "enrol participants");
    auto v = exp->put_cohort(context::cohort_from_json(parse_body(req)), clock());
    return json_response({{"version", v}});
  }

  if (parts.size() == 6 && resource == "participants" && parts[5] == "data") {
    if (m != "GET") throw MethodNotAllowed{};
    require_self(role, parts[4]);
    return json_response(exp->participant_data(parts[4], query_instant(req, "from"), query_instant(req, "to")));
  }

  if (parts.size() != 4) throw NotFound("no route for " + req.path);

  if (resource == "timeline") {
    if (m != "GET") throw MethodNotAllowed{};
    auto pid = query(req, "participant").value_or(role.participant);
    if (pid.empty()) throw ValidationError("query.participant", "required");
    require_self(role, pid);
    auto tl = exp->timeline(pid);
    if (!tl) throw NotFound("participant " + pid + " is not enrolled");
    auto from = query_instant(req, "from");
    auto to = query_instant(req, "to");
    std::erase_if(tl->entries, [&](const schedule::Entry& e) {
      return (from && e.occurrence.scheduled_at < *from) || (to && e.occurrence.scheduled_at >= *to);
    });
    auto format = query(req, "format").value_or("json");
    if (format == "ndjson") return {200, "application/x-ndjson", schedule::export_records(*tl)};
    if (format == "ics") {
      cal::ExperimentPlan plan = cal::parse_plan(exp->plan_text());
      return {200, "text/calendar", schedule::export_vevents(*tl, plan)};
    }
    if (format != "json") throw ValidationError("query.format", "expected json, ndjson or ics");
    ojson entries = ojson::array();
    for (const auto& e : tl->entries)
      entries.push_back({{"source", schedule::to_string(e.occurrence.source)},
                         {"seq", e.occurrence.seq_no},
                         {"scheduled_at", format_iso(e.occurrence.scheduled_at)},
                         {"window_end", format_iso(e.occurrence.window_end)},
                         {"cancelled", e.cancelled}});
    return json_response({{"participant", pid},
                          {"version", exp->version()},
                          {"revisions", tl->audit.size()},
                          {"entries", std::move(entries)}});
  }

  if (resource == "events") {
    if (m != "POST") throw MethodNotAllowed{};
    require(role, {RoleKind::Platform, RoleKind::Researcher}, "ingest events");
    auto body = parse_body(req);
    if (!body.is_object() || !body.contains("batch_id") || !body.contains("events") || !body["events"].is_array())
      throw SchemaError("events: expected {\"batch_id\": ..., \"events\": [...]}");
    if (!body["batch_id"].is_string()) throw SchemaError("events: batch_id must be a string");
    sim::EventLog batch;
    std::size_t i = 0;
    for (const auto& e : body["events"]) {
      try {
        batch.push_back(sim::event_from_json(e));
      } catch (const SchemaError& err) {
        throw SchemaError("events[" + std::to_string(i) + "]: " + err.what());
      }
      ++i;
    }
    auto ack = exp->ingest(body["batch_id"].get<std::string>(), batch);
    return json_response({{"offset", ack.offset}, {"accepted", ack.accepted}, {"duplicate", ack.duplicate}});
  }

  if (resource == "summary") {
    if (m != "GET") throw MethodNotAllowed{};
    return json_response(exp->summary(viewer, query(req, "participant").value_or("")));
  }

  if (resource == "heatmap") {
    if (m != "GET") throw MethodNotAllowed{};
    auto h = exp->heatmap(query_instant(req, "from"), query_instant(req, "to"));
    if (role.kind == RoleKind::Participant) {
      auto it = std::find(h.participants.begin(), h.participants.end(), role.participant);
      if (it == h.participants.end()) throw AuthorizationError("participant " + role.participant + " is not enrolled");
      auto row = std::size_t(it - h.participants.begin());
      h.participants = {role.participant};
      h.cells = {h.cells[row]};
      for (std::size_t d = 0; d < h.days.size(); ++d) h.empty_day[d] = h.cells[0][d].delivered == 0 && h.cells[0][d].answered == 0;
    }
    auto format = query(req, "format").value_or("json");
    if (format == "csv") return {200, "text/csv", quality::heatmap_csv(h)};
    if (format != "json") throw ValidationError("query.format", "expected json or csv");
    return json_response(quality::heatmap_to_json(h));
  }

  if (resource == "compare") {
    if (m != "GET") throw MethodNotAllowed{};
    auto pids = split(query(req, "pids").value_or(""), ',');
    std::erase(pids, std::string{});
    for (const auto& p : pids) require_self(role, p);
    return json_response(exp->compare(pids));
  }

  if (resource == "revisions") {
    if (m != "POST") throw MethodNotAllowed{};
    auto rev = schedule::revision_from_json(parse_body(req));
    static const std::map<RoleKind, schedule::Actor> kActor{{RoleKind::Researcher, schedule::Actor::Researcher},
                                                            {RoleKind::Participant, schedule::Actor::Participant},
                                                            {RoleKind::Platform, schedule::Actor::Platform}};
    if (kActor.at(role.kind) != rev.actor)
      throw RoleMismatch(std::string(to_string(role.kind)) + " token cannot issue a " +
                         std::string(schedule::to_string(rev.actor)) + " revision");
    if (role.kind == RoleKind::Participant) {
      if (rev.participant.empty()) rev.participant = role.participant;
      require_self(role, rev.participant);
    }
    auto ack = exp->revise(rev);
    return json_response({{"version", ack.version}, {"affected", ack.affected}, {"participants", ack.participants}});
  }

  if (resource == "stream") {
    if (m != "GET") throw MethodNotAllowed{};
    auto from = query_uint(req, "offset", 0);
    auto limit = std::clamp<std::uint64_t>(query_uint(req, "limit", 10000), 1, 100000);
    auto wait = std::min<std::uint64_t>(query_uint(req, "wait_ms", 0), 60000);
    if (from > exp->offset())
      throw ValidationError("stream.offset", "offset " + std::to_string(from) + " is past the end of the log");
    if (wait > 0 && from == exp->offset()) exp->wait_past(from, std::chrono::milliseconds(wait));
    auto page = exp->stream(from, viewer, limit);
    return json_response({{"offset", from}, {"next_offset", page.next_offset}, {"records", std::move(page.records)}});
  }

  if (resource == "quality-params") {
    if (m == "GET") return json_response(quality::params_to_json(exp->params()));
    if (m != "PUT") throw MethodNotAllowed{};
    require(role, {RoleKind::Researcher}, "change quality parameters");
    auto v = exp->put_params(quality::params_from_json(parse_body(req)), clock());
    return json_response({{"version", v}});
  }

  if (resource == "reports") {
    if (m != "GET") throw MethodNotAllowed{};
    auto type = query(req, "type").value_or("all");
    auto format = query(req, "format").value_or("json");
    auto rankings = exp->rankings();
    std::vector<quality::QualityFlag> flags;
    for (auto& f : exp->flags()) flags.push_back(std::move(f.flag));
    if (role.kind == RoleKind::Participant) {
      std::erase_if(rankings, [&](const auto& r) { return r.participant != role.participant; });
      std::erase_if(flags, [&](const auto& f) { return f.participant != role.participant; });
    }
    if (type == "rankings" && format == "csv") return {200, "text/csv", quality::rankings_csv(rankings)};
    if (type == "flags" && format == "csv") return {200, "text/csv", quality::flags_csv(flags)};
    if (type == "flags" && format == "ndjson") return {200, "application/x-ndjson", quality::flags_ndjson(flags)};
    if (format != "json" || (type != "all" && type != "rankings" && type != "flags"))
      throw ValidationError("query", "expected type=all|rankings|flags with format json, or rankings/flags as csv, or flags as ndjson");
    if (type == "all" && role.kind != RoleKind::Participant) return json_response(exp->snapshot());
    ojson out{{"offset", exp->offset()}, {"version", exp->version()}};
    if (type != "flags") {
      ojson r = ojson::array();
      for (const auto& x : rankings) r.push_back(quality::ranking_to_json(x));
      out["rankings"] = std::move(r);
    }
    if (type != "rankings") {
      ojson f = ojson::array();
      for (const auto& x : flags) f.push_back(quality::flag_to_json(x));
      out["flags"] = std::move(f);
    }
    return json_response(out);
  }

  throw NotFound("no route for " + req.path);
}

// HTTP server ------------------------------------------------------------------------------

struct Server::Impl {
  httplib::Server http;
  std::string host;
};

Server::Server(Service& service, const std::string& bind) : impl_(std::make_unique<Impl>()) {
  auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw ValidationError("bind", "expected host:port, got '" + bind + "'");
  impl_->host = bind.substr(0, colon);
  int port = 0;
  auto port_text = bind.substr(colon + 1);
  auto res = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  if (port_text.empty() || res.ec != std::errc{} || port < 0 || port > 65535)
    throw ValidationError("bind", "bad port '" + port_text + "'");

  impl_->http.new_task_queue = [] { return new httplib::ThreadPool(16); };
  auto handler = [&service](const httplib::Request& hr, httplib::Response& out) {
    Request r;
    r.method = hr.method;
    r.path = hr.path;
    for (const auto& [k, v] : hr.params) r.query.emplace(k, v);
    r.body = hr.body;
    r.authorization = hr.get_header_value("Authorization");
    auto resp = service.handle(r);
    out.status = resp.status;
    out.set_content(resp.body, resp.content_type);
  };
  impl_->http.Get(".*", handler);
  impl_->http.Put(".*", handler);
  impl_->http.Post(".*", handler);
  impl_->http.Delete(".*", handler);
  impl_->http.Patch(".*", handler);

  if (port == 0) port_ = impl_->http.bind_to_any_port(impl_->host);
  else port_ = impl_->http.bind_to_port(impl_->host, port) ? port : -1;
  if (port_ <= 0) throw std::runtime_error("cannot bind " + bind);
}

Server::~Server() { stop(); }

void Server::run() { impl_->http.listen_after_bind(); }

void Server::stop() { impl_->http.stop(); }

} // namespace ilog::service
