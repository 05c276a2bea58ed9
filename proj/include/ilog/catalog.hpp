#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ilog/ilogcal.hpp"
#include "ilog/time.hpp"

// Reference vocabularies and the sensor catalog of the three-diary study design.
namespace ilog::catalog {

/// "Where are you?" answers (26).
std::span<const std::string_view> locations();
/// "What are you doing?" answers (34).
std::span<const std::string_view> activities();
/// "Who is with you?" answers (8, including "Alone").
std::span<const std::string_view> companions();
/// "What is your mood?" five-level scale.
std::span<const std::string_view> moods();

/// Coarse place class a location sensor can observe for a location answer,
/// e.g. "University Classroom/library" -> "university". Used by the simulator
/// to emit readings and by the location consistency check.
std::string_view place_class(std::string_view location);

/// Activity/location pairs that cannot co-occur (e.g. driving in a library).
bool implausible_pair(std::string_view activity, std::string_view location);

enum class Cadence { Periodic, OnChange };

struct SensorSpec {
  std::string_view name;
  cal::SensorType type;
  Cadence cadence;
  Duration period;  // nominal period for periodic sensors; zero for on-change
  bool big;         // high-rate sensor, summarized per occurrence
};

/// HW, SW and QA sensor catalog (34 entries).
std::span<const SensorSpec> sensors();
const SensorSpec* find_sensor(std::string_view name);

/// The three-diary experiment: a general-day diary (08:00 and 22:00
/// questions), a time diary asking where/what/with-whom/mood every 30 minutes
/// for two weeks then hourly for two weeks, and a food-and-drink diary every two
/// hours outside meal times. All three calendars share the same sensor
/// collections (location every minute for 48 days, plus movement, Wi-Fi and
/// screen sensors). start should be midnight UTC.
cal::ExperimentPlan three_diary_plan(Instant start, std::string user = "cohort-1");

/// Only the time diary, with a configurable location-sensor period; smaller and
/// used by simulations that do not need the full sensor load. `categories`
/// keeps only the diary questions of those categories (empty keeps all four).
cal::ExperimentPlan time_diary_plan(Instant start, std::string user = "cohort-1",
                                    Duration location_period = std::chrono::minutes{10},
                                    int days = 28, std::vector<cal::Category> categories = {});

} // namespace ilog::catalog
