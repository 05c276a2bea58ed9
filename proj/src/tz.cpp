#include "ilog/tz.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace ilog {

namespace {

std::int64_t be(const unsigned char* p, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v = (v << 8) | p[i];
  if (n == 4) return std::int32_t(std::uint32_t(v));
  return std::int64_t(v);
}

bool parse_fixed(const std::string& s, std::int32_t& seconds) {
  if (s.size() != 6 || (s[0] != '+' && s[0] != '-') || s[3] != ':') return false;
  for (int i : {1, 2, 4, 5})
    if (s[i] < '0' || s[i] > '9') return false;
  int h = (s[1] - '0') * 10 + (s[2] - '0');
  int m = (s[4] - '0') * 10 + (s[5] - '0');
  if (h > 14 || m > 59) return false;
  seconds = (h * 3600 + m * 60) * (s[0] == '-' ? -1 : 1);
  return true;
}

} // namespace

TimeZone TimeZone::utc() { return fixed(Duration{0}, "UTC"); }

TimeZone TimeZone::fixed(Duration offset, std::string name) {
  TimeZone tz;
  tz.name_ = std::move(name);
  tz.base_offset_ = std::int32_t(offset.count() / 1000);
  return tz;
}

// Reads the 64-bit section of a TZif (v2+) file. Instants beyond the last
// transition keep its offset; the footer rule is not evaluated, which is exact
// for the fat zoneinfo builds that list transitions through 2037.
TimeZone TimeZone::load(const std::string& name) {
  if (name.empty() || name == "UTC" || name == "Etc/UTC" || name == "Z") return utc();
  std::int32_t fixed_seconds = 0;
  if (parse_fixed(name, fixed_seconds)) return fixed(std::chrono::seconds{fixed_seconds}, name);
  if (name.find("..") != std::string::npos) throw std::runtime_error("invalid zone name: " + name);

  const char* dir = std::getenv("TZDIR");
  std::string path = std::string(dir ? dir : "/usr/share/zoneinfo") + "/" + name;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("unknown time zone: " + name);
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), {});

  auto fail = [&] { return std::runtime_error("malformed zoneinfo file for " + name); };
  auto header = [&](std::size_t at, std::int64_t counts[6]) {
    if (data.size() < at + 44 || std::string(data.begin() + at, data.begin() + at + 4) != "TZif")
      throw fail();
    for (int i = 0; i < 6; ++i) counts[i] = be(&data[at + 20 + 4 * i], 4);
  };
  // counts: isutcnt, isstdcnt, leapcnt, timecnt, typecnt, charcnt
  std::int64_t c[6];
  header(0, c);
  char version = char(data[4]);
  std::size_t pos = 44;
  int time_size = 4;
  if (version >= '2') {
    pos += std::size_t(c[3] * 4 + c[3] + c[4] * 6 + c[5] + c[2] * 8 + c[1] + c[0]);
    header(pos, c);
    pos += 44;
    time_size = 8;
  }
  std::int64_t timecnt = c[3], typecnt = c[4];
  std::size_t need = pos + std::size_t(timecnt * time_size + timecnt + typecnt * 6);
  if (data.size() < need || typecnt == 0) throw fail();

  std::vector<std::int32_t> type_offsets(static_cast<std::size_t>(typecnt));
  std::size_t types_at = pos + std::size_t(timecnt * time_size + timecnt);
  for (std::int64_t i = 0; i < typecnt; ++i)
    type_offsets[std::size_t(i)] = std::int32_t(be(&data[types_at + std::size_t(i) * 6], 4));

  TimeZone tz;
  tz.name_ = name;
  tz.base_offset_ = type_offsets[0];
  for (std::int64_t i = 0; i < timecnt; ++i) {
    std::int64_t at = be(&data[pos + std::size_t(i * time_size)], time_size);
    unsigned idx = data[pos + std::size_t(timecnt * time_size + i)];
    if (idx >= type_offsets.size()) throw fail();
    tz.transitions_.push_back({at, type_offsets[idx]});
  }
  return tz;
}

Duration TimeZone::offset_at(Instant t) const {
  std::int64_t s = std::chrono::floor<std::chrono::seconds>(t).time_since_epoch().count();
  auto it = std::upper_bound(transitions_.begin(), transitions_.end(), s,
                             [](std::int64_t v, const Transition& tr) { return v < tr.at_seconds; });
  std::int32_t off = it == transitions_.begin() ? base_offset_ : std::prev(it)->offset_seconds;
  return std::chrono::seconds{off};
}

} // namespace ilog
