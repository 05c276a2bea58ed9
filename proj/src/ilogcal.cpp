#include "ilog/ilogcal.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <map>
#include <set>

#include "ilog/errors.hpp"
#include "ilog/recurrence.hpp"

namespace ilog::cal {

namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = char(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

template <class E, std::size_t N>
std::optional<E> lookup(const std::array<std::pair<std::string_view, E>, N>& table, std::string_view token) {
  auto u = upper(token);
  for (const auto& [name, value] : table)
    if (name == u) return value;
  return std::nullopt;
}

constexpr std::array<std::pair<std::string_view, Frequency>, 20> kFrequencyTokens{{
    {"X-MILLISECOND", Frequency::Millisecond}, {"MILLISECOND", Frequency::Millisecond},
    {"X-MILLISECONDLY", Frequency::Millisecond}, {"MILLISECONDLY", Frequency::Millisecond},
    {"SECONDLY", Frequency::Second},           {"SECOND", Frequency::Second},
    {"X-SECOND", Frequency::Second},           {"MINUTELY", Frequency::Minute},
    {"MINUTE", Frequency::Minute},             {"X-MINUTE", Frequency::Minute},
    {"HOURLY", Frequency::Hour},               {"HOUR", Frequency::Hour},
    {"X-HOUR", Frequency::Hour},               {"DAILY", Frequency::Daily},
    {"DAY", Frequency::Daily},                 {"WEEKLY", Frequency::Weekly},
    {"WEEK", Frequency::Weekly},               {"MONTHLY", Frequency::Monthly},
    {"MONTH", Frequency::Monthly},             {"YEARLY", Frequency::Yearly},
}};

constexpr std::array<std::pair<std::string_view, Category>, 5> kCategoryTokens{{
    {"WE", Category::WE}, {"WA", Category::WA}, {"WI", Category::WI}, {"WO", Category::WO}, {"WU", Category::WU},
}};

constexpr std::array<std::pair<std::string_view, QuestionType>, 4> kQuestionTypeTokens{{
    {"DICHOTOMOUS", QuestionType::Dichotomous},
    {"MULTIPLE-CHOICE", QuestionType::MultipleChoice},
    {"SINGLE-CHOICE", QuestionType::SingleChoice},
    {"FREE-TEXT", QuestionType::FreeText},
}};

constexpr std::array<std::pair<std::string_view, SensorType>, 8> kSensorTypeTokens{{
    {"SOCIAL", SensorType::Social},
    {"MOTION", SensorType::Motion},
    {"LOCATION", SensorType::Location},
    {"INERTIAL", SensorType::Inertial},
    {"DEVICE", SensorType::Device},
    {"AMBIENT", SensorType::Ambient},
    {"SOFTWARE", SensorType::Software},
    {"QUESTION-ANSWERING", SensorType::QuestionAnswering},
}};

template <class E, std::size_t N>
std::string_view name_of(const std::array<std::pair<std::string_view, E>, N>& table, E v) {
  for (const auto& [name, value] : table)
    if (value == v) return name;
  return "?";
}

} // namespace

std::string_view to_string(Frequency f) {
  switch (f) {
  case Frequency::Millisecond: return "X-MILLISECOND";
  case Frequency::Second: return "SECONDLY";
  case Frequency::Minute: return "MINUTELY";
  case Frequency::Hour: return "HOURLY";
  case Frequency::Daily: return "DAILY";
  case Frequency::Weekly: return "WEEKLY";
  case Frequency::Monthly: return "MONTHLY";
  case Frequency::Yearly: return "YEARLY";
  }
  return "?";
}
std::string_view to_string(Category c) { return name_of(kCategoryTokens, c); }
std::string_view to_string(QuestionType t) { return name_of(kQuestionTypeTokens, t); }
std::string_view to_string(SensorType t) { return name_of(kSensorTypeTokens, t); }

std::optional<Frequency> parse_frequency(std::string_view t) { return lookup(kFrequencyTokens, t); }
std::optional<Category> parse_category(std::string_view t) { return lookup(kCategoryTokens, t); }
std::optional<QuestionType> parse_question_type(std::string_view t) { return lookup(kQuestionTypeTokens, t); }
std::optional<SensorType> parse_sensor_type(std::string_view t) { return lookup(kSensorTypeTokens, t); }

std::optional<Duration> unit_length(Frequency f) {
  switch (f) {
  case Frequency::Millisecond: return Duration{1};
  case Frequency::Second: return kSecond;
  case Frequency::Minute: return kMinute;
  case Frequency::Hour: return kHour;
  case Frequency::Daily: return kDay;
  case Frequency::Weekly: return 7 * kDay;
  default: return std::nullopt;
  }
}

bool is_question_frequency(Frequency f) {
  return f == Frequency::Daily || f == Frequency::Weekly || f == Frequency::Monthly ||
         f == Frequency::Yearly;
}

std::string format_rrule(const RecurrenceRule& r) {
  return "FREQ=" + std::string(to_string(r.frequency)) + ";INTERVAL=" + std::to_string(r.interval) +
         ";COUNT=" + std::to_string(r.count);
}

namespace {

std::optional<std::uint64_t> parse_u64(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::uint64_t v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

} // namespace

std::optional<RecurrenceRule> parse_rrule(std::string_view text, std::string* error) {
  auto fail = [&](std::string msg) -> std::optional<RecurrenceRule> {
    if (error) *error = std::move(msg);
    return std::nullopt;
  };
  RecurrenceRule r;
  bool have_freq = false, have_count = false, have_interval = false;
  for (auto part : split(text, ';')) {
    auto eq = part.find('=');
    if (eq == std::string_view::npos) return fail("rule part '" + std::string(part) + "' has no '='");
    auto key = upper(part.substr(0, eq));
    auto value = part.substr(eq + 1);
    if (key == "FREQ") {
      if (have_freq) return fail("FREQ given twice");
      auto f = parse_frequency(value);
      if (!f) return fail("unknown frequency '" + std::string(value) + "'");
      r.frequency = *f;
      have_freq = true;
    } else if (key == "INTERVAL") {
      if (have_interval) return fail("INTERVAL given twice");
      auto v = parse_u64(value);
      if (!v || *v == 0) return fail("INTERVAL '" + std::string(value) + "' is not a positive integer");
      r.interval = *v;
      have_interval = true;
    } else if (key == "COUNT") {
      if (have_count) return fail("COUNT given twice");
      auto v = parse_u64(value);
      if (!v || *v == 0) return fail("COUNT '" + std::string(value) + "' is not a positive integer");
      r.count = *v;
      have_count = true;
    } else {
      return fail("unsupported rule part '" + key + "'");
    }
  }
  if (!have_freq) return fail("FREQ is required");
  if (!have_count) return fail("COUNT is required");
  return r;
}

// ---------------------------------------------------------------------------
// Content lines

std::string escape_text(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
    case '\\': out += "\\\\"; break;
    case ';': out += "\\;"; break;
    case ',': out += "\\,"; break;
    case '\n': out += "\\n"; break;
    default: out += c;
    }
  }
  return out;
}

std::string unescape_text(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      char n = s[++i];
      out += (n == 'n' || n == 'N') ? '\n' : n;
    } else {
      out += s[i];
    }
  }
  return out;
}

namespace {

// Splits on commas not preceded by an escaping backslash.
std::vector<std::string> split_escaped_list(std::string_view s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::string cur;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      cur += s[i];
      cur += s[++i];
    } else if (s[i] == ',') {
      out.push_back(unescape_text(cur));
      cur.clear();
    } else {
      cur += s[i];
    }
  }
  out.push_back(unescape_text(cur));
  return out;
}

std::string join_escaped_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += escape_text(items[i]);
  }
  return out;
}

} // namespace

std::string fold_line(std::string_view line) {
  constexpr std::size_t kLimit = 75;
  if (line.size() <= kLimit) return std::string(line);
  std::string out;
  std::size_t pos = 0;
  std::size_t budget = kLimit;
  while (pos < line.size()) {
    std::size_t take = std::min(budget, line.size() - pos);
    // Back off so a UTF-8 continuation byte never starts the next segment.
    while (take > 0 && pos + take < line.size() && (static_cast<unsigned char>(line[pos + take]) & 0xC0) == 0x80)
      --take;
    if (!out.empty()) out += "\r\n ";
    out.append(line.substr(pos, take));
    pos += take;
    budget = kLimit - 1;
  }
  return out;
}

std::string unfold(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    std::size_t nl = text[i] == '\r' && i + 1 < text.size() && text[i + 1] == '\n' ? i + 1 : i;
    if (text[nl] == '\n' && nl + 1 < text.size() && (text[nl + 1] == ' ' || text[nl + 1] == '\t')) {
      i = nl + 1;
      continue;
    }
    out += text[i];
  }
  return out;
}

namespace {

struct SourceLine {
  ContentLine content;
  std::size_t line;
};

struct RawComponent {
  std::string name;
  std::size_t line = 0;
  std::vector<SourceLine> props;
  std::vector<RawComponent> children;
};

bool is_name_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-'; }

ContentLine parse_content_line(std::string_view s, std::size_t line) {
  ContentLine cl;
  std::size_t i = 0;
  while (i < s.size() && is_name_char(s[i])) ++i;
  if (i == 0) throw SyntaxError(line, "content line has no property name");
  cl.name = upper(s.substr(0, i));
  while (i < s.size() && s[i] == ';') {
    ++i;
    std::size_t start = i;
    while (i < s.size() && is_name_char(s[i])) ++i;
    if (i == start || i >= s.size() || s[i] != '=')
      throw SyntaxError(line, "malformed parameter in " + cl.name);
    std::string pname = upper(s.substr(start, i - start));
    ++i;
    std::string pvalue;
    if (i < s.size() && s[i] == '"') {
      auto close = s.find('"', i + 1);
      if (close == std::string_view::npos) throw SyntaxError(line, "unterminated quoted parameter value");
      pvalue = std::string(s.substr(i, close - i + 1));
      i = close + 1;
    } else {
      std::size_t vs = i;
      while (i < s.size() && s[i] != ';' && s[i] != ':') ++i;
      pvalue = std::string(s.substr(vs, i - vs));
    }
    cl.params.emplace_back(std::move(pname), std::move(pvalue));
  }
  if (i >= s.size() || s[i] != ':') throw SyntaxError(line, "expected ':' after " + cl.name);
  cl.value = std::string(s.substr(i + 1));
  return cl;
}

// Unfolds while remembering the physical line each logical line started on.
std::vector<std::pair<std::string, std::size_t>> logical_lines(std::string_view text) {
  std::vector<std::pair<std::string, std::size_t>> out;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    std::string_view phys = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    ++lineno;
    if (!phys.empty() && phys.back() == '\r') phys.remove_suffix(1);
    if (!phys.empty() && (phys.front() == ' ' || phys.front() == '\t')) {
      if (out.empty()) throw SyntaxError(lineno, "continuation line with nothing to continue");
      out.back().first.append(phys.substr(1));
    } else if (!phys.empty()) {
      out.emplace_back(std::string(phys), lineno);
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return out;
}

std::vector<RawComponent> parse_components(std::string_view text) {
  std::vector<RawComponent> roots;
  std::vector<RawComponent> stack;
  for (auto& [s, line] : logical_lines(text)) {
    auto cl = parse_content_line(s, line);
    if (cl.name == "BEGIN") {
      RawComponent c;
      c.name = upper(cl.value);
      c.line = line;
      if (c.name.empty()) throw SyntaxError(line, "BEGIN without component name");
      if (stack.empty() && c.name != "VCALENDAR")
        throw SyntaxError(line, "top-level component must be VCALENDAR, got " + c.name);
      stack.push_back(std::move(c));
    } else if (cl.name == "END") {
      if (stack.empty() || stack.back().name != upper(cl.value))
        throw SyntaxError(line, "END:" + cl.value + " does not close the open component");
      auto done = std::move(stack.back());
      stack.pop_back();
      if (stack.empty())
        roots.push_back(std::move(done));
      else
        stack.back().children.push_back(std::move(done));
    } else {
      if (stack.empty()) throw SyntaxError(line, "property " + cl.name + " outside any component");
      stack.back().props.push_back({std::move(cl), line});
    }
  }
  if (!stack.empty()) throw SyntaxError(stack.back().line, stack.back().name + " is never closed");
  return roots;
}

void flatten(const RawComponent& c, Extensions& out) {
  out.push_back({"BEGIN", {}, c.name});
  for (const auto& p : c.props) out.push_back(p.content);
  for (const auto& ch : c.children) flatten(ch, out);
  out.push_back({"END", {}, c.name});
}

// ---------------------------------------------------------------------------
// Invariant checks, shared by the document builder and validate_plan. Each
// check skips fields whose conversion already produced a diagnostic so a single
// bad token is reported once.

struct Sink {
  std::vector<Diagnostic>& out;
  void error(std::string path, std::string code, std::string msg, std::size_t line = 0) {
    out.push_back({Severity::Error, std::move(path), std::move(code), std::move(msg), line});
  }
  void warning(std::string path, std::string code, std::string msg, std::size_t line = 0) {
    out.push_back({Severity::Warning, std::move(path), std::move(code), std::move(msg), line});
  }
};

struct FieldsOk {
  bool dtstart = true, dtend = true, rrule = true, qtype = true;
};

void check_window_and_rule(Sink& sink, const std::string& path, Instant dtstart, Instant dtend,
                           const RecurrenceRule& rule, const FieldsOk& ok, bool is_question,
                           std::size_t line) {
  if (ok.dtstart && ok.dtend && dtstart >= dtend)
    sink.error(path, "window", "DTEND " + format_ical(dtend) + " is not after DTSTART " + format_ical(dtstart), line);
  if (!ok.rrule) return;
  if (rule.interval == 0) sink.error(path + ".RRULE", "bad_value", "INTERVAL must be at least 1", line);
  if (rule.count == 0) sink.error(path + ".RRULE", "bad_value", "COUNT must be at least 1", line);
  if (is_question && !is_question_frequency(rule.frequency))
    sink.warning(path + ".RRULE", "subdaily_question",
                 "question frequency " + std::string(to_string(rule.frequency)) +
                     " extends the question frequency set (DAILY, WEEKLY, MONTHLY, YEARLY)",
                 line);
  if (ok.dtstart && ok.dtend && dtstart < dtend && rule.interval > 0 && rule.count > 0) {
    auto fit = schedule::instants_before(rule, dtstart, dtend);
    if (fit < rule.count)
      sink.warning(path + ".RRULE", "count_unreachable",
                   "COUNT=" + std::to_string(rule.count) + " but only " + std::to_string(fit) +
                       " occurrence(s) fit before DTEND",
                   line);
  }
}

void check_question(Sink& sink, const std::string& path, const Question& q, bool type_ok, std::size_t line) {
  if (!type_ok) return;
  switch (q.type) {
  case QuestionType::Dichotomous:
    if (q.options.size() != 2)
      sink.error(path + ".X-QOPTIONS", "options", "DICHOTOMOUS needs exactly 2 options, has " + std::to_string(q.options.size()), line);
    break;
  case QuestionType::SingleChoice:
  case QuestionType::MultipleChoice:
    if (q.options.empty())
      sink.error(path + ".X-QOPTIONS", "options", std::string(to_string(q.type)) + " needs at least one option", line);
    break;
  case QuestionType::FreeText:
    if (!q.options.empty()) sink.error(path + ".X-QOPTIONS", "options", "FREE-TEXT takes no options", line);
    break;
  }
}

struct IdEntry {
  std::optional<Id> id;  // nullopt when the id itself was invalid
  std::string path;
  std::size_t line = 0;
};

void check_unique(Sink& sink, const std::vector<IdEntry>& ids, const char* what) {
  std::map<Id, const IdEntry*> seen;
  for (const auto& e : ids) {
    if (!e.id) continue;
    auto [it, fresh] = seen.emplace(*e.id, &e);
    if (!fresh)
      sink.error(e.path, "duplicate_id", std::string(what) + " id " + std::to_string(*e.id) +
                                             " already used at " + it->second->path, e.line);
  }
}

std::string child_path(const std::string& parent, const char* kind, const std::string& key) {
  return (parent.empty() ? "" : parent + "/") + kind + "[" + key + "]";
}

// ---------------------------------------------------------------------------
// Document -> plan

class Builder {
public:
  explicit Builder(std::vector<Diagnostic>& out) : sink_{out} {}

  ExperimentPlan build(const std::vector<RawComponent>& roots) {
    ExperimentPlan plan;
    std::vector<IdEntry> ids;
    std::optional<std::string> user;
    std::string user_path;
    for (const auto& root : roots) {
      Props props(*this, root, {"UID", "X-ILOG-USER", "VERSION", "PRODID"});
      Calendar cal;
      auto id = props.id("UID");
      cal.id = id.value_or(0);
      std::string path = child_path("", "calendar", props.key("UID"));
      props.rebase(path);
      props.report_id("UID");
      if (auto u = props.required("X-ILOG-USER")) {
        auto name = unescape_text(u->value);
        if (!user) {
          user = name;
          user_path = path;
        } else if (*user != name) {
          sink_.error(path + ".X-ILOG-USER", "user_mismatch",
                      "user '" + name + "' differs from '" + *user + "' at " + user_path, props.line(*u));
        }
      }
      if (auto v = props.optional("VERSION"); v && v->value != "2.0")
        sink_.warning(path + ".VERSION", "version", "expected VERSION:2.0, got " + v->value, props.line(*v));
      cal.extensions = props.extensions();
      ids.push_back({id, path, root.line});

      std::vector<IdEntry> ctx_ids;
      for (const auto& child : root.children) {
        if (child.name == "X-ILOG-CONTEXT") {
          cal.contexts.push_back(context(child, path, ctx_ids));
        } else {
          flatten(child, cal.extensions);
        }
      }
      check_unique(sink_, ctx_ids, "context collection");
      plan.calendars.push_back(std::move(cal));
    }
    check_unique(sink_, ids, "calendar");
    if (plan.calendars.empty()) sink_.error("plan", "empty_plan", "document contains no VCALENDAR");
    plan.user = user.value_or("");
    return plan;
  }

private:
  // Property access for one component: splits known properties from
  // extensions, flags duplicates and missing required properties.
  class Props {
  public:
    Props(Builder& b, const RawComponent& c, std::set<std::string> known) : b_(b), c_(c) {
      std::set<std::string> dup_reported;
      for (const auto& p : c.props) {
        if (known.contains(p.content.name)) {
          if (found_.contains(p.content.name)) {
            duplicates_.push_back(&p);
          } else {
            found_.emplace(p.content.name, &p);
          }
        } else {
          extensions_.push_back(p.content);
        }
      }
    }

    void rebase(std::string path) {
      path_ = std::move(path);
      for (const auto* p : duplicates_)
        b_.sink_.error(path_ + "." + p->content.name, "duplicate_property",
                       p->content.name + " given more than once", p->line);
    }

    const ContentLine* optional(const std::string& name) const {
      auto it = found_.find(name);
      return it == found_.end() ? nullptr : &it->second->content;
    }

    const ContentLine* required(const std::string& name) const {
      auto* p = optional(name);
      if (!p) b_.sink_.error(path_ + "." + name, "missing_property", name + " is required", c_.line);
      return p;
    }

    std::size_t line(const ContentLine& cl) const {
      for (const auto& [n, p] : found_)
        if (&p->content == &cl) return p->line;
      return c_.line;
    }

    // Raw UID text for paths, before the id is validated.
    std::string key(const std::string& name) const {
      auto* p = optional(name);
      return p ? p->value : "?";
    }

    std::optional<Id> id(const std::string& name) {
      auto* p = optional(name);
      if (!p) {
        missing_id_ = name;
        return std::nullopt;
      }
      auto v = parse_u64(p->value);
      if (!v) bad_id_ = p;
      return v;
    }

    // Reports deferred id problems once the component path is known.
    void report_id(const std::string& name) {
      if (missing_id_ == name) {
        b_.sink_.error(path_ + "." + name, "missing_property", name + " is required", c_.line);
      } else if (bad_id_ && bad_id_->name == name) {
        b_.sink_.error(path_ + "." + name, "bad_value",
                       "'" + bad_id_->value + "' is not a non-negative 64-bit integer", line(*bad_id_));
      }
      missing_id_.clear();
      bad_id_ = nullptr;
    }

    std::optional<Instant> instant(const std::string& name) {
      auto* p = required(name);
      if (!p) return std::nullopt;
      auto t = parse_ical(p->value);
      if (!t)
        b_.sink_.error(path_ + "." + name, "bad_value",
                       "'" + p->value + "' is not a UTC timestamp (YYYYMMDDTHHMMSSZ)", line(*p));
      return t;
    }

    template <class T, class Parse>
    std::optional<T> token(const std::string& name, Parse parse, const char* what) {
      auto* p = required(name);
      if (!p) return std::nullopt;
      auto v = parse(p->value);
      if (!v)
        b_.sink_.error(path_ + "." + name, "bad_value", "'" + p->value + "' is not a valid " + what, line(*p));
      return v;
    }

    std::optional<RecurrenceRule> rrule() {
      auto* p = required("RRULE");
      if (!p) return std::nullopt;
      std::string err;
      auto r = parse_rrule(p->value, &err);
      if (!r) b_.sink_.error(path_ + ".RRULE", "bad_value", err, line(*p));
      return r;
    }

    Extensions extensions() const { return extensions_; }
    const std::string& path() const { return path_; }

  private:
    Builder& b_;
    const RawComponent& c_;
    std::map<std::string, const SourceLine*> found_;
    std::vector<const SourceLine*> duplicates_;
    Extensions extensions_;
    std::string path_;
    std::string missing_id_;
    const ContentLine* bad_id_ = nullptr;
  };

  ContextCollection context(const RawComponent& raw, const std::string& parent, std::vector<IdEntry>& ids) {
    Props props(*this, raw, {"UID"});
    ContextCollection ctx;
    auto id = props.id("UID");
    ctx.id = id.value_or(0);
    std::string path = child_path(parent, "context", props.key("UID"));
    props.rebase(path);
    props.report_id("UID");
    ids.push_back({id, path, raw.line});
    ctx.extensions = props.extensions();
    std::vector<IdEntry> q_ids, s_ids;
    for (const auto& child : raw.children) {
      if (child.name == "X-ILOG-QUESTION")
        ctx.questions.push_back(question(child, path, q_ids));
      else if (child.name == "X-ILOG-SENSOR")
        ctx.sensors.push_back(sensor(child, path, s_ids));
      else
        flatten(child, ctx.extensions);
    }
    check_unique(sink_, q_ids, "question collection");
    check_unique(sink_, s_ids, "sensor collection");
    return ctx;
  }

  QuestionCollection question(const RawComponent& raw, const std::string& parent, std::vector<IdEntry>& ids) {
    Props props(*this, raw,
                {"UID", "DTSTART", "DTEND", "STATUS", "RRULE", "X-QID", "X-QCATEGORY", "X-QCONTENT",
                 "X-QOPTIONS", "X-QTYPE", "X-QANSWER"});
    QuestionCollection qc;
    auto id = props.id("UID");
    qc.cid = id.value_or(0);
    std::string path = child_path(parent, "question", props.key("UID"));
    props.rebase(path);
    props.report_id("UID");
    ids.push_back({id, path, raw.line});

    FieldsOk ok;
    auto start = props.instant("DTSTART");
    auto end = props.instant("DTEND");
    ok.dtstart = start.has_value();
    ok.dtend = end.has_value();
    qc.dtstart = start.value_or(Instant{});
    qc.dtend = end.value_or(Instant{});
    if (auto* s = props.optional("STATUS")) {
      if (s->value == "1" || s->value == "0")
        qc.accepted = s->value == "1";
      else
        sink_.error(path + ".STATUS", "bad_value", "STATUS must be 1 (accepted) or 0 (rejected), got '" + s->value + "'", props.line(*s));
    }
    auto rule = props.rrule();
    ok.rrule = rule.has_value();
    qc.rrule = rule.value_or(RecurrenceRule{});

    if (props.required("X-QID")) {
      qc.question.qid = props.id("X-QID").value_or(0);
      props.report_id("X-QID");
    }
    if (auto c = props.token<Category>("X-QCATEGORY", parse_category, "question category (WE, WA, WI, WO, WU)"))
      qc.question.category = *c;
    if (auto* c = props.required("X-QCONTENT")) qc.question.content = unescape_text(c->value);
    if (auto* o = props.optional("X-QOPTIONS")) qc.question.options = split_escaped_list(o->value);
    auto qtype = props.token<QuestionType>("X-QTYPE", parse_question_type,
                                           "question type (DICHOTOMOUS, MULTIPLE-CHOICE, SINGLE-CHOICE, FREE-TEXT)");
    ok.qtype = qtype.has_value();
    qc.question.type = qtype.value_or(QuestionType::FreeText);
    if (auto* a = props.optional("X-QANSWER")) qc.question.answer = unescape_text(a->value);
    qc.extensions = props.extensions();
    for (const auto& child : raw.children) flatten(child, qc.extensions);

    check_window_and_rule(sink_, path, qc.dtstart, qc.dtend, qc.rrule, ok, true, raw.line);
    check_question(sink_, path, qc.question, ok.qtype, raw.line);
    return qc;
  }

  SensorCollection sensor(const RawComponent& raw, const std::string& parent, std::vector<IdEntry>& ids) {
    Props props(*this, raw,
                {"UID", "DTSTART", "DTEND", "RRULE", "X-SENSOR-NAME", "X-SENSOR-DESC", "X-SENSOR-TYPE"});
    SensorCollection sc;
    auto id = props.id("UID");
    sc.sid = id.value_or(0);
    std::string path = child_path(parent, "sensor", props.key("UID"));
    props.rebase(path);
    props.report_id("UID");
    ids.push_back({id, path, raw.line});

    FieldsOk ok;
    auto start = props.instant("DTSTART");
    auto end = props.instant("DTEND");
    ok.dtstart = start.has_value();
    ok.dtend = end.has_value();
    sc.dtstart = start.value_or(Instant{});
    sc.dtend = end.value_or(Instant{});
    auto rule = props.rrule();
    ok.rrule = rule.has_value();
    sc.rrule = rule.value_or(RecurrenceRule{});
    if (auto* n = props.required("X-SENSOR-NAME")) sc.sensor.name = unescape_text(n->value);
    if (auto* d = props.optional("X-SENSOR-DESC")) sc.sensor.description = unescape_text(d->value);
    if (auto t = props.token<SensorType>("X-SENSOR-TYPE", parse_sensor_type, "sensor type"))
      sc.sensor.type = *t;
    sc.extensions = props.extensions();
    for (const auto& child : raw.children) flatten(child, sc.extensions);

    check_window_and_rule(sink_, path, sc.dtstart, sc.dtend, sc.rrule, ok, false, raw.line);
    return sc;
  }

  Sink sink_;
};

} // namespace

std::string format_diagnostic(const Diagnostic& d) {
  std::string out = d.severity == Severity::Error ? "error" : "warning";
  if (d.line) out += " (line " + std::to_string(d.line) + ")";
  out += " " + d.path + ": " + d.message + " [" + d.code + "]";
  return out;
}

std::size_t error_count(const std::vector<Diagnostic>& ds) {
  return std::size_t(std::count_if(ds.begin(), ds.end(), [](const Diagnostic& d) { return d.severity == Severity::Error; }));
}

std::vector<Diagnostic> lint_plan(std::string_view text) {
  std::vector<Diagnostic> out;
  try {
    auto roots = parse_components(text);
    Builder(out).build(roots);
  } catch (const SyntaxError& e) {
    out.push_back({Severity::Error, "document", "syntax", e.what(), e.line()});
  }
  return out;
}

ExperimentPlan parse_plan(std::string_view text) {
  auto roots = parse_components(text);
  std::vector<Diagnostic> diags;
  auto plan = Builder(diags).build(roots);
  for (const auto& d : diags) {
    if (d.severity != Severity::Error) continue;
    if (d.code == "duplicate_id") throw DuplicateIdError(d.path, d.message);
    throw ValidationError(d.path, d.message);
  }
  return plan;
}

std::vector<Diagnostic> validate_plan(const ExperimentPlan& plan) {
  std::vector<Diagnostic> out;
  Sink sink{out};
  if (plan.calendars.empty()) sink.error("plan", "empty_plan", "plan has no calendars");
  if (plan.user.empty()) sink.error("plan", "missing_property", "plan has no user");
  std::vector<IdEntry> cal_ids;
  for (const auto& cal : plan.calendars) {
    auto cpath = child_path("", "calendar", std::to_string(cal.id));
    cal_ids.push_back({cal.id, cpath});
    std::vector<IdEntry> ctx_ids;
    for (const auto& ctx : cal.contexts) {
      auto xpath = child_path(cpath, "context", std::to_string(ctx.id));
      ctx_ids.push_back({ctx.id, xpath});
      std::vector<IdEntry> q_ids, s_ids;
      for (const auto& q : ctx.questions) {
        auto qpath = child_path(xpath, "question", std::to_string(q.cid));
        q_ids.push_back({q.cid, qpath});
        check_window_and_rule(sink, qpath, q.dtstart, q.dtend, q.rrule, {}, true, 0);
        check_question(sink, qpath, q.question, true, 0);
      }
      for (const auto& s : ctx.sensors) {
        auto spath = child_path(xpath, "sensor", std::to_string(s.sid));
        s_ids.push_back({s.sid, spath});
        check_window_and_rule(sink, spath, s.dtstart, s.dtend, s.rrule, {}, false, 0);
      }
      check_unique(sink, q_ids, "question collection");
      check_unique(sink, s_ids, "sensor collection");
    }
    check_unique(sink, ctx_ids, "context collection");
  }
  check_unique(sink, cal_ids, "calendar");
  return out;
}

ExperimentPlan normalized(ExperimentPlan plan) {
  auto by = [](auto member) { return [member](const auto& a, const auto& b) { return a.*member < b.*member; }; };
  std::stable_sort(plan.calendars.begin(), plan.calendars.end(), by(&Calendar::id));
  for (auto& cal : plan.calendars) {
    std::stable_sort(cal.contexts.begin(), cal.contexts.end(), by(&ContextCollection::id));
    for (auto& ctx : cal.contexts) {
      std::stable_sort(ctx.questions.begin(), ctx.questions.end(), by(&QuestionCollection::cid));
      std::stable_sort(ctx.sensors.begin(), ctx.sensors.end(), by(&SensorCollection::sid));
    }
  }
  return plan;
}

namespace {

class Writer {
public:
  void line(std::string_view name, std::string_view value) {
    std::string l(name);
    l += ':';
    l += value;
    out_ += fold_line(l);
    out_ += "\r\n";
  }
  void raw(const ContentLine& cl) {
    std::string l = cl.name;
    for (const auto& [k, v] : cl.params) l += ";" + k + "=" + v;
    l += ':';
    l += cl.value;
    out_ += fold_line(l);
    out_ += "\r\n";
  }
  void extensions(const Extensions& ext) {
    for (const auto& cl : ext) raw(cl);
  }
  std::string take() { return std::move(out_); }

private:
  std::string out_;
};

} // namespace

std::string serialize_plan(const ExperimentPlan& input) {
  auto plan = normalized(input);
  Writer w;
  for (const auto& cal : plan.calendars) {
    w.line("BEGIN", "VCALENDAR");
    w.line("VERSION", "2.0");
    w.line("PRODID", "-//ilog//ilogcal 1.0//EN");
    w.line("UID", std::to_string(cal.id));
    w.line("X-ILOG-USER", escape_text(plan.user));
    w.extensions(cal.extensions);
    for (const auto& ctx : cal.contexts) {
      w.line("BEGIN", "X-ILOG-CONTEXT");
      w.line("UID", std::to_string(ctx.id));
      w.extensions(ctx.extensions);
      for (const auto& q : ctx.questions) {
        w.line("BEGIN", "X-ILOG-QUESTION");
        w.line("UID", std::to_string(q.cid));
        w.line("DTSTART", format_ical(q.dtstart));
        w.line("DTEND", format_ical(q.dtend));
        w.line("STATUS", q.accepted ? "1" : "0");
        w.line("RRULE", format_rrule(q.rrule));
        w.line("X-QID", std::to_string(q.question.qid));
        w.line("X-QCATEGORY", to_string(q.question.category));
        w.line("X-QCONTENT", escape_text(q.question.content));
        if (!q.question.options.empty()) w.line("X-QOPTIONS", join_escaped_list(q.question.options));
        w.line("X-QTYPE", to_string(q.question.type));
        if (q.question.answer) w.line("X-QANSWER", escape_text(*q.question.answer));
        w.extensions(q.extensions);
        w.line("END", "X-ILOG-QUESTION");
      }
      for (const auto& s : ctx.sensors) {
        w.line("BEGIN", "X-ILOG-SENSOR");
        w.line("UID", std::to_string(s.sid));
        w.line("DTSTART", format_ical(s.dtstart));
        w.line("DTEND", format_ical(s.dtend));
        w.line("RRULE", format_rrule(s.rrule));
        w.line("X-SENSOR-NAME", escape_text(s.sensor.name));
        w.line("X-SENSOR-DESC", escape_text(s.sensor.description));
        w.line("X-SENSOR-TYPE", to_string(s.sensor.type));
        w.extensions(s.extensions);
        w.line("END", "X-ILOG-SENSOR");
      }
      w.line("END", "X-ILOG-CONTEXT");
    }
    w.line("END", "VCALENDAR");
  }
  return w.take();
}

} // namespace ilog::cal
