#include "ilog/time.hpp"

#include <charconv>
#include <cstdio>

namespace ilog {

namespace chr = std::chrono;

namespace {

struct Fields {
  int year;
  unsigned month, day;
  int hour, minute, second, millis;
};

Fields split(Instant t) {
  auto days = chr::floor<chr::days>(t);
  chr::year_month_day ymd{days};
  auto rem = t - days;
  auto h = chr::duration_cast<chr::hours>(rem);
  rem -= h;
  auto m = chr::duration_cast<chr::minutes>(rem);
  rem -= m;
  auto s = chr::duration_cast<chr::seconds>(rem);
  rem -= s;
  return {int(ymd.year()), unsigned(ymd.month()), unsigned(ymd.day()), int(h.count()),
          int(m.count()), int(s.count()), int(rem.count())};
}

bool read_int(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  for (std::size_t i = pos; i < pos + len; ++i)
    if (s[i] < '0' || s[i] > '9') return false;
  auto r = std::from_chars(s.data() + pos, s.data() + pos + len, out);
  return r.ec == std::errc{};
}

std::optional<Instant> build(int y, int mo, int d, int h, int mi, int se, int ms) {
  if (mo < 1 || mo > 12 || d < 1 || h > 23 || mi > 59 || se > 59) return std::nullopt;
  chr::year_month_day ymd{chr::year{y}, chr::month{unsigned(mo)}, chr::day{unsigned(d)}};
  if (!ymd.ok()) return std::nullopt;
  return make_instant(y, unsigned(mo), unsigned(d), h, mi, se, ms);
}

// Parses ".mmm" at pos; returns the position after it.
bool read_millis(std::string_view s, std::size_t& pos, int& ms) {
  ms = 0;
  if (pos < s.size() && s[pos] == '.') {
    if (!read_int(s, pos + 1, 3, ms)) return false;
    pos += 4;
  }
  return true;
}

} // namespace

Instant make_instant(int year, unsigned month, unsigned day, int hour, int minute, int second,
                     int millis) {
  chr::sys_days d{chr::year{year} / chr::month{month} / chr::day{day}};
  return chr::time_point_cast<Duration>(d) + chr::hours{hour} + chr::minutes{minute} +
         chr::seconds{second} + Duration{millis};
}

Instant floor_day(Instant t) { return chr::time_point_cast<Duration>(chr::floor<chr::days>(t)); }

std::int64_t day_index(Instant t) {
  return chr::floor<chr::days>(t).time_since_epoch().count();
}

std::string format_date(Instant t) {
  auto f = split(t);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", f.year, f.month, f.day);
  return buf;
}

std::optional<Instant> parse_date(std::string_view s) {
  int y, mo, d;
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  if (!read_int(s, 0, 4, y) || !read_int(s, 5, 2, mo) || !read_int(s, 8, 2, d)) return std::nullopt;
  return build(y, mo, d, 0, 0, 0, 0);
}

std::string format_ical(Instant t) {
  auto f = split(t);
  char buf[32];
  if (f.millis == 0)
    std::snprintf(buf, sizeof buf, "%04d%02u%02uT%02d%02d%02dZ", f.year, f.month, f.day, f.hour,
                  f.minute, f.second);
  else
    std::snprintf(buf, sizeof buf, "%04d%02u%02uT%02d%02d%02d.%03dZ", f.year, f.month, f.day,
                  f.hour, f.minute, f.second, f.millis);
  return buf;
}

std::optional<Instant> parse_ical(std::string_view s) {
  int y, mo, d, h, mi, se, ms;
  if (s.size() < 16 || s[8] != 'T') return std::nullopt;
  if (!read_int(s, 0, 4, y) || !read_int(s, 4, 2, mo) || !read_int(s, 6, 2, d) ||
      !read_int(s, 9, 2, h) || !read_int(s, 11, 2, mi) || !read_int(s, 13, 2, se))
    return std::nullopt;
  std::size_t pos = 15;
  if (!read_millis(s, pos, ms)) return std::nullopt;
  if (pos + 1 != s.size() || s[pos] != 'Z') return std::nullopt;
  return build(y, mo, d, h, mi, se, ms);
}

std::string format_iso(Instant t) {
  auto f = split(t);
  char buf[32];
  if (f.millis == 0)
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", f.year, f.month, f.day,
                  f.hour, f.minute, f.second);
  else
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", f.year, f.month, f.day,
                  f.hour, f.minute, f.second, f.millis);
  return buf;
}

std::optional<Instant> parse_iso(std::string_view s) {
  int y, mo, d, h, mi, se, ms;
  if (s.size() < 20 || s[4] != '-' || s[7] != '-' || s[10] != 'T' || s[13] != ':' ||
      s[16] != ':')
    return std::nullopt;
  if (!read_int(s, 0, 4, y) || !read_int(s, 5, 2, mo) || !read_int(s, 8, 2, d) ||
      !read_int(s, 11, 2, h) || !read_int(s, 14, 2, mi) || !read_int(s, 17, 2, se))
    return std::nullopt;
  std::size_t pos = 19;
  if (!read_millis(s, pos, ms)) return std::nullopt;
  if (pos + 1 != s.size() || s[pos] != 'Z') return std::nullopt;
  return build(y, mo, d, h, mi, se, ms);
}

Instant add_months_clamped(Instant t, std::int64_t months) {
  auto days = chr::floor<chr::days>(t);
  auto tod = t - days;
  chr::year_month_day ymd{days};
  std::int64_t total = std::int64_t(int(ymd.year())) * 12 + (unsigned(ymd.month()) - 1) + months;
  std::int64_t y = total >= 0 ? total / 12 : (total - 11) / 12;
  auto m = unsigned(total - y * 12 + 1);
  chr::year_month_day_last last{chr::year{int(y)}, chr::month_day_last{chr::month{m}}};
  auto day = std::min(ymd.day(), last.day());
  chr::sys_days out{chr::year{int(y)} / chr::month{m} / day};
  return chr::time_point_cast<Duration>(out) + tod;
}

int iso_weekday(Instant t) {
  chr::weekday wd{chr::floor<chr::days>(t)};
  return int(wd.iso_encoding());
}

} // namespace ilog

namespace ilog {

DayPeriod day_period(int hour) {
  if (hour >= 6 && hour < 12) return DayPeriod::Morning;
  if (hour >= 12 && hour < 18) return DayPeriod::Afternoon;
  if (hour >= 18) return DayPeriod::Evening;
  return DayPeriod::Night;
}

int hour_of_day(Instant t) {
  return int((t - floor_day(t)) / kHour);
}

std::string_view to_string(DayPeriod p) {
  switch (p) {
  case DayPeriod::Morning: return "Morning";
  case DayPeriod::Afternoon: return "Afternoon";
  case DayPeriod::Evening: return "Evening";
  case DayPeriod::Night: return "Night";
  }
  return "?";
}

std::optional<DayPeriod> parse_day_period(std::string_view s) {
  for (auto p : {DayPeriod::Morning, DayPeriod::Afternoon, DayPeriod::Evening, DayPeriod::Night})
    if (to_string(p) == s) return p;
  return std::nullopt;
}

} // namespace ilog
