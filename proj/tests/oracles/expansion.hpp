#pragma once

// Brute-force recurrence expansion used as the reference for expand().
//
// Fixed-length frequencies walk the window one unit at a time and keep every
// INTERVAL-th step. Monthly and yearly rules walk the window day by day and
// keep the days whose civil month is a multiple of the step away from DTSTART
// and whose day of month is DTSTART's, clamped to the month's length. Nothing
// here calls into the library's calendar helpers.

#include <chrono>
#include <cstdint>
#include <vector>

#include "ilog/ilogcal.hpp"

namespace oracle {

using ilog::Instant;
using ilog::cal::Frequency;
using ilog::cal::RecurrenceRule;
namespace chr = std::chrono;

inline chr::milliseconds unit_of(Frequency f) {
  switch (f) {
  case Frequency::Millisecond: return chr::milliseconds{1};
  case Frequency::Second: return chr::seconds{1};
  case Frequency::Minute: return chr::minutes{1};
  case Frequency::Hour: return chr::hours{1};
  case Frequency::Daily: return chr::hours{24};
  case Frequency::Weekly: return chr::hours{24 * 7};
  default: return chr::milliseconds{0};
  }
}

inline std::vector<Instant> expand(const RecurrenceRule& r, Instant dtstart, Instant dtend) {
  std::vector<Instant> out;
  if (r.frequency != Frequency::Monthly && r.frequency != Frequency::Yearly) {
    auto unit = unit_of(r.frequency);
    std::uint64_t k = 0;
    for (Instant t = dtstart; t < dtend && out.size() < r.count; t += unit, ++k)
      if (k % r.interval == 0) out.push_back(t);
    return out;
  }
  std::int64_t step = std::int64_t(r.interval) * (r.frequency == Frequency::Yearly ? 12 : 1);
  auto start_day = chr::floor<chr::days>(dtstart);
  auto time_of_day = dtstart - start_day;
  chr::year_month_day first{start_day};
  for (auto day = start_day; day < dtend && out.size() < r.count; day += chr::days{1}) {
    chr::year_month_day ymd{day};
    std::int64_t months = (int(ymd.year()) - int(first.year())) * 12 +
                          (std::int64_t(unsigned(ymd.month())) - std::int64_t(unsigned(first.month())));
    if (months % step != 0) continue;
    unsigned last = unsigned(chr::year_month_day_last{ymd.year(), chr::month_day_last{ymd.month()}}.day());
    unsigned want = std::min(unsigned(first.day()), last);
    if (unsigned(ymd.day()) != want) continue;
    Instant t = day + time_of_day;
    if (t >= dtstart && t < dtend) out.push_back(t);
  }
  return out;
}

} // namespace oracle
