#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace ilog {

// All instants are UTC with millisecond resolution. Local time only shows up
// at feature extraction and display (see tz.hpp).
using Duration = std::chrono::milliseconds;
using Instant = std::chrono::sys_time<Duration>;

inline constexpr Duration kSecond = std::chrono::seconds{1};
inline constexpr Duration kMinute = std::chrono::minutes{1};
inline constexpr Duration kHour = std::chrono::hours{1};
inline constexpr Duration kDay = std::chrono::hours{24};

inline constexpr Instant from_millis(std::int64_t ms) { return Instant{Duration{ms}}; }
inline constexpr std::int64_t to_millis(Instant t) { return t.time_since_epoch().count(); }

Instant make_instant(int year, unsigned month, unsigned day, int hour = 0, int minute = 0,
                     int second = 0, int millis = 0);

/// Midnight UTC of the day containing t.
Instant floor_day(Instant t);

/// Days since 1970-01-01 for the UTC date of t (floor).
std::int64_t day_index(Instant t);

/// "YYYY-MM-DD" for the UTC date of t.
std::string format_date(Instant t);
std::optional<Instant> parse_date(std::string_view s);

/// iCalendar UTC form: YYYYMMDDTHHMMSSZ. Sub-second instants get a ".mmm" suffix
/// before the Z, which the parser also accepts.
std::string format_ical(Instant t);
std::optional<Instant> parse_ical(std::string_view s);

/// ISO-8601 UTC: YYYY-MM-DDTHH:MM:SSZ, with ".mmm" when sub-second.
std::string format_iso(Instant t);
std::optional<Instant> parse_iso(std::string_view s);

/// Adds whole calendar months, clamping the day to the target month's length.
/// Time of day is preserved.
Instant add_months_clamped(Instant t, std::int64_t months);

/// ISO weekday of the UTC date: 1 = Monday ... 7 = Sunday.
int iso_weekday(Instant t);

/// Hour bands: Morning 06-11, Afternoon 12-17, Evening 18-23, Night 00-05.
enum class DayPeriod { Morning, Afternoon, Evening, Night };

DayPeriod day_period(int hour);
/// Hour of day (0-23) of t read as UTC; pass a local wall-clock instant for
/// local hours.
int hour_of_day(Instant t);
std::string_view to_string(DayPeriod p);
std::optional<DayPeriod> parse_day_period(std::string_view s);

} // namespace ilog
