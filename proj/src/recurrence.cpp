#include "ilog/recurrence.hpp"

#include <algorithm>
#include <chrono>
#include <limits>

namespace ilog::schedule {

namespace {

constexpr __int128 kMaxMs = std::numeric_limits<std::int64_t>::max();
// Keeps calendar arithmetic inside the proleptic years chrono can represent.
constexpr std::uint64_t kMaxMonths = 12ULL * 20000ULL;

std::uint64_t months_per_step(const cal::RecurrenceRule& r) {
  return r.frequency == cal::Frequency::Yearly ? 12 : 1;
}

std::int64_t month_number(Instant t) {
  std::chrono::year_month_day ymd{std::chrono::floor<std::chrono::days>(t)};
  return std::int64_t(int(ymd.year())) * 12 + unsigned(ymd.month()) - 1;
}

} // namespace

std::optional<Instant> nth_instant(const cal::RecurrenceRule& rule, Instant dtstart, std::uint64_t k) {
  if (auto unit = cal::unit_length(rule.frequency)) {
    __int128 offset = __int128(k) * __int128(rule.interval) * __int128(unit->count());
    __int128 at = __int128(to_millis(dtstart)) + offset;
    if (at > kMaxMs) return std::nullopt;
    return from_millis(std::int64_t(at));
  }
  __int128 months = __int128(k) * __int128(rule.interval) * months_per_step(rule);
  if (months > __int128(kMaxMonths)) return std::nullopt;
  return add_months_clamped(dtstart, std::int64_t(months));
}

std::uint64_t instants_before(const cal::RecurrenceRule& rule, Instant dtstart, Instant dtend) {
  if (dtend <= dtstart || rule.interval == 0) return 0;
  if (auto unit = cal::unit_length(rule.frequency)) {
    __int128 span = __int128(to_millis(dtend)) - to_millis(dtstart);
    __int128 step = __int128(rule.interval) * unit->count();
    return std::uint64_t((span - 1) / step + 1);
  }
  // nth_instant is monotone in k, so binary-search the last k before dtend.
  std::uint64_t step = rule.interval * months_per_step(rule);
  if (rule.interval > kMaxMonths) return 1;
  std::uint64_t span_months = std::uint64_t(std::max<std::int64_t>(0, month_number(dtend) - month_number(dtstart)));
  std::uint64_t lo = 0, hi = span_months / step + 2;  // nth(lo) < dtend, nth(hi) >= dtend
  while (hi - lo > 1) {
    std::uint64_t mid = lo + (hi - lo) / 2;
    auto t = nth_instant(rule, dtstart, mid);
    if (t && *t < dtend)
      lo = mid;
    else
      hi = mid;
  }
  return lo + 1;
}

std::uint64_t expansion_size(const cal::RecurrenceRule& rule, Instant dtstart, Instant dtend) {
  return std::min(rule.count, instants_before(rule, dtstart, dtend));
}

} // namespace ilog::schedule
