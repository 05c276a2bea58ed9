#pragma once

#include <cstdint>
#include <optional>

#include "ilog/ilogcal.hpp"
#include "ilog/time.hpp"

// Closed-form recurrence arithmetic shared by plan validation and expansion.
namespace ilog::schedule {

/// dtstart + k * interval units; Monthly/Yearly step calendar months with the
/// day clamped to the target month. nullopt if the instant is not representable.
std::optional<Instant> nth_instant(const cal::RecurrenceRule& rule, Instant dtstart, std::uint64_t k);

/// Number of k >= 0 with nth_instant(k) < dtend, ignoring the rule's COUNT.
/// Zero when dtend <= dtstart.
std::uint64_t instants_before(const cal::RecurrenceRule& rule, Instant dtstart, Instant dtend);

/// min(count, instants_before(...)): the length expand() produces.
std::uint64_t expansion_size(const cal::RecurrenceRule& rule, Instant dtstart, Instant dtend);

} // namespace ilog::schedule
