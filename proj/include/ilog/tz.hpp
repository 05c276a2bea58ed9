#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ilog/time.hpp"

namespace ilog {

/// UTC offset lookup for a participant's zone. Accepts "UTC", fixed offsets
/// ("+01:00", "-05:30") and IANA names read from the system zoneinfo database
/// ($TZDIR, default /usr/share/zoneinfo).
class TimeZone {
public:
  static TimeZone utc();
  static TimeZone fixed(Duration offset, std::string name);
  /// Throws std::runtime_error when the zone cannot be resolved.
  static TimeZone load(const std::string& name);

  const std::string& name() const { return name_; }
  Duration offset_at(Instant t) const;
  /// Wall-clock reading in this zone, expressed as if it were a UTC instant.
  Instant to_local(Instant t) const { return t + offset_at(t); }

private:
  struct Transition {
    std::int64_t at_seconds;
    std::int32_t offset_seconds;
  };

  std::string name_;
  std::int32_t base_offset_ = 0;
  std::vector<Transition> transitions_;
};

} // namespace ilog
