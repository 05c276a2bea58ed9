#include "ilog/catalog.hpp"

#include <algorithm>
#include <array>

namespace ilog::catalog {

using namespace std::chrono_literals;

namespace {

using namespace std::string_view_literals;
using cal::SensorType;

constexpr std::array kLocations{
    "Home Apartment/room"sv,      "Home Relatives"sv,         "House Friends/others"sv,
    "University Classroom/library"sv, "University Canteen"sv, "Restaurant/pub"sv,
    "In the street"sv,            "Another indoor place"sv,   "Another outdoor place"sv,
    "University Study hall"sv,    "University Office"sv,      "University Other"sv,
    "Workplace"sv,                "Gym"sv,                    "Library (non-university)"sv,
    "Shop/supermarket"sv,         "Bar/cafe"sv,               "Park"sv,
    "Countryside/mountain"sv,     "Car"sv,                    "Bus"sv,
    "Train"sv,                    "Bike"sv,                   "On foot"sv,
    "Hospital/clinic"sv,          "Place of worship"sv,
};
static_assert(kLocations.size() == 26);

constexpr std::array kActivities{
    "Sleeping"sv,        "Personal care"sv,      "Eating"sv,           "Cooking"sv,
    "Housework"sv,       "Shopping"sv,           "Lecture/seminar"sv,  "Studying"sv,
    "Group study"sv,     "Working"sv,            "Commuting"sv,        "Driving"sv,
    "Walking"sv,         "Cycling"sv,            "Sport/exercise"sv,   "Social life"sv,
    "Phone call"sv,      "Chatting online"sv,    "Social media"sv,     "Watching TV/movies"sv,
    "Reading"sv,         "Listening to music"sv, "Playing games"sv,    "Hobbies"sv,
    "Resting"sv,         "Volunteering"sv,       "Religious activity"sv, "Caring for others"sv,
    "Errands"sv,         "Waiting"sv,            "Traveling"sv,        "Other free time"sv,
    "Nothing special"sv, "Other"sv,
};
static_assert(kActivities.size() == 34);

constexpr std::array kCompanions{
    "Alone"sv,   "Partner"sv, "Roommates"sv,         "Classmates"sv,
    "Relatives"sv, "Friends"sv, "Colleagues/other"sv, "Other"sv,
};
static_assert(kCompanions.size() == 8);

constexpr std::array kMoods{"Very happy"sv, "Happy"sv, "Neutral"sv, "Sad"sv, "Very sad"sv};

struct PlaceClass {
  std::string_view location;
  std::string_view cls;
};

constexpr std::array<PlaceClass, 26> kPlaceClasses{{
    {"Home Apartment/room", "home"},
    {"Home Relatives", "home"},
    {"House Friends/others", "friends_house"},
    {"University Classroom/library", "university"},
    {"University Canteen", "university"},
    {"Restaurant/pub", "food"},
    {"In the street", "outdoor"},
    {"Another indoor place", "indoor"},
    {"Another outdoor place", "outdoor"},
    {"University Study hall", "university"},
    {"University Office", "university"},
    {"University Other", "university"},
    {"Workplace", "workplace"},
    {"Gym", "indoor"},
    {"Library (non-university)", "indoor"},
    {"Shop/supermarket", "indoor"},
    {"Bar/cafe", "food"},
    {"Park", "outdoor"},
    {"Countryside/mountain", "outdoor"},
    {"Car", "vehicle"},
    {"Bus", "vehicle"},
    {"Train", "vehicle"},
    {"Bike", "outdoor"},
    {"On foot", "outdoor"},
    {"Hospital/clinic", "indoor"},
    {"Place of worship", "indoor"},
}};

// Activities that only make sense in a few places; everything else is allowed
// anywhere.
struct Restriction {
  std::string_view activity;
  std::array<std::string_view, 5> allowed_classes;
};

constexpr std::array<Restriction, 4> kRestrictions{{
    {"Driving", {"vehicle", "outdoor"}},
    {"Cycling", {"outdoor"}},
    {"Lecture/seminar", {"university"}},
    {"Sleeping", {"home", "friends_house", "vehicle"}},
}};

constexpr Duration kFast = std::chrono::milliseconds{100};
constexpr Duration kZero{0};

constexpr std::array<SensorSpec, 34> kSensors{{
    {"Accelerometer", SensorType::Motion, Cadence::Periodic, kFast, true},
    {"Gyroscope", SensorType::Inertial, Cadence::Periodic, kFast, true},
    {"Light", SensorType::Ambient, Cadence::Periodic, kFast, true},
    {"Location", SensorType::Location, Cadence::Periodic, std::chrono::minutes{1}, false},
    {"Magnetic Field", SensorType::Inertial, Cadence::Periodic, kFast, true},
    {"Pressure", SensorType::Ambient, Cadence::Periodic, kFast, true},
    {"Airplane Mode", SensorType::Device, Cadence::OnChange, kZero, false},
    {"Battery Charge", SensorType::Device, Cadence::OnChange, kZero, false},
    {"Battery Level", SensorType::Device, Cadence::OnChange, kZero, false},
    {"Bluetooth Devices", SensorType::Social, Cadence::Periodic, std::chrono::minutes{1}, false},
    {"Bluetooth LE Devices", SensorType::Social, Cadence::Periodic, std::chrono::minutes{1}, false},
    {"Cellular network info", SensorType::Device, Cadence::Periodic, std::chrono::minutes{1}, false},
    {"Doze Mode", SensorType::Device, Cadence::OnChange, kZero, false},
    {"Headset Status", SensorType::Device, Cadence::OnChange, kZero, false},
    {"Movement Activity Label", SensorType::Motion, Cadence::Periodic, std::chrono::seconds{30}, false},
    {"Movement Activity per Time", SensorType::Motion, Cadence::Periodic, std::chrono::seconds{30}, false},
    {"Music Playback", SensorType::Software, Cadence::OnChange, kZero, false},
    {"Notifications received", SensorType::Software, Cadence::OnChange, kZero, false},
    {"Proximity", SensorType::Ambient, Cadence::Periodic, kFast, false},
    {"Ring mode", SensorType::Device, Cadence::OnChange, kZero, false},
    {"Running Applications", SensorType::Software, Cadence::Periodic, std::chrono::seconds{5}, false},
    {"Screen Status", SensorType::Device, Cadence::OnChange, kZero, false},
    {"Step Counter", SensorType::Motion, Cadence::Periodic, kFast, false},
    {"Step Detection", SensorType::Motion, Cadence::OnChange, kZero, false},
    {"Touch event", SensorType::Software, Cadence::OnChange, kZero, false},
    {"User Presence", SensorType::Device, Cadence::OnChange, kZero, false},
    {"WIFI Network Connected to", SensorType::Location, Cadence::OnChange, kZero, false},
    {"WIFI Networks Available", SensorType::Location, Cadence::Periodic, std::chrono::minutes{1}, false},
    {"Time Diary question", SensorType::QuestionAnswering, Cadence::OnChange, kZero, false},
    {"Time Diary confirmation", SensorType::QuestionAnswering, Cadence::OnChange, kZero, false},
    {"Time Diary answer", SensorType::QuestionAnswering, Cadence::OnChange, kZero, false},
    {"Task question", SensorType::QuestionAnswering, Cadence::OnChange, kZero, false},
    {"Task confirmation", SensorType::QuestionAnswering, Cadence::OnChange, kZero, false},
    {"Task answer", SensorType::QuestionAnswering, Cadence::OnChange, kZero, false},
}};

std::vector<std::string> to_strings(std::span<const std::string_view> v) {
  return {v.begin(), v.end()};
}

} // namespace

std::span<const std::string_view> locations() { return kLocations; }
std::span<const std::string_view> activities() { return kActivities; }
std::span<const std::string_view> companions() { return kCompanions; }
std::span<const std::string_view> moods() { return kMoods; }

std::string_view place_class(std::string_view location) {
  for (const auto& p : kPlaceClasses)
    if (p.location == location) return p.cls;
  return "unknown";
}

bool implausible_pair(std::string_view activity, std::string_view location) {
  auto cls = place_class(location);
  if (cls == "unknown") return false;
  for (const auto& r : kRestrictions) {
    if (r.activity != activity) continue;
    return std::find(r.allowed_classes.begin(), r.allowed_classes.end(), cls) == r.allowed_classes.end();
  }
  return false;
}

std::span<const SensorSpec> sensors() { return kSensors; }

const SensorSpec* find_sensor(std::string_view name) {
  for (const auto& s : kSensors)
    if (s.name == name) return &s;
  return nullptr;
}

namespace {

using cal::Category;
using cal::Frequency;
using cal::QuestionType;

cal::QuestionCollection question(cal::Id cid, cal::Id qid, Instant start, Instant end, cal::RecurrenceRule rule,
                                 Category cat, std::string text, std::vector<std::string> options,
                                 QuestionType type) {
  cal::QuestionCollection q;
  q.cid = cid;
  q.dtstart = start;
  q.dtend = end;
  q.rrule = rule;
  q.question = {qid, cat, std::move(text), std::move(options), type, std::nullopt};
  return q;
}

cal::SensorCollection sensor(cal::Id sid, std::string_view name, std::string desc, Instant start, Instant end,
                             cal::RecurrenceRule rule) {
  cal::SensorCollection s;
  s.sid = sid;
  s.dtstart = start;
  s.dtend = end;
  s.rrule = rule;
  const auto* spec = find_sensor(name);
  s.sensor = {std::string(name), std::move(desc), spec ? spec->type : cal::SensorType::Device};
  if (spec && spec->cadence == Cadence::OnChange) s.extensions.push_back({"X-ILOG-TRIGGER", {}, "ON-CHANGE"});
  return s;
}

std::vector<cal::SensorCollection> shared_sensors(Instant start) {
  Instant end = start + 48 * kDay;
  return {
      sensor(1, "Location", "Location information using GPS connections", start, end,
             {Frequency::Minute, 1, 69120}),
      sensor(2, "Movement Activity Label", "Activity recognition label", start, end,
             {Frequency::Second, 30, 138240}),
      sensor(3, "WIFI Network Connected to", "Connected Wi-Fi network", start, end, {Frequency::Daily, 1, 48}),
      sensor(4, "Screen Status", "Screen on/off", start, end, {Frequency::Daily, 1, 48}),
  };
}

std::vector<cal::QuestionCollection> diary_questions(Instant start, cal::Id first_cid, Instant phase_start,
                                                     Duration cadence, std::uint64_t count, Duration span) {
  cal::RecurrenceRule rule = cadence == std::chrono::minutes{30}
                                 ? cal::RecurrenceRule{Frequency::Minute, 30, count}
                                 : cal::RecurrenceRule{Frequency::Hour, std::uint64_t(cadence / kHour), count};
  (void)start;
  Instant end = phase_start + span;
  return {
      question(first_cid, 101, phase_start, end, rule, Category::WA, "What are you doing?",
               to_strings(activities()), QuestionType::SingleChoice),
      question(first_cid + 1, 102, phase_start, end, rule, Category::WE, "Where are you?",
               to_strings(locations()), QuestionType::SingleChoice),
      question(first_cid + 2, 103, phase_start, end, rule, Category::WO, "Who is with you?",
               to_strings(companions()), QuestionType::SingleChoice),
      question(first_cid + 3, 104, phase_start, end, rule, Category::WI, "What is your mood?",
               to_strings(moods()), QuestionType::SingleChoice),
  };
}

} // namespace

cal::ExperimentPlan three_diary_plan(Instant start, std::string user) {
  cal::ExperimentPlan plan;
  plan.user = std::move(user);
  Instant end = start + 28 * kDay;
  cal::RecurrenceRule daily{Frequency::Daily, 1, 28};
  std::vector<std::string> scale{"1", "2", "3", "4", "5"};

  cal::ContextCollection general{1, {}, shared_sensors(start), {}};
  general.questions = {
      question(1, 1, start + 8h, end, daily, Category::WI, "How did you sleep?", scale, QuestionType::SingleChoice),
      question(2, 2, start + 8h, end, daily, Category::WA, "What do you expect from today?", {},
               QuestionType::FreeText),
      question(3, 3, start + 22h, end, daily, Category::WI, "How would you rate your day?", scale,
               QuestionType::SingleChoice),
      question(4, 4, start + 22h, end, daily, Category::WA, "Did you encounter any problems today?", {},
               QuestionType::FreeText),
      question(5, 5, start + 22h, end, daily, Category::WA, "How did you solve them?", {}, QuestionType::FreeText),
      question(6, 6, start + 22h, end, daily, Category::WI, "Has the COVID-19 pandemic affected your day?",
               {"Yes", "No"}, QuestionType::Dichotomous),
  };

  Instant phase1 = start + 8h;
  Instant phase2 = phase1 + 14 * kDay;
  cal::ContextCollection diary{1, diary_questions(start, 1, phase1, 30min, 672, 14 * kDay), shared_sensors(start), {}};
  auto second = diary_questions(start, 11, phase2, 1h, 336, 14 * kDay);
  diary.questions.insert(diary.questions.end(), second.begin(), second.end());

  cal::ContextCollection food{1, {}, shared_sensors(start), {}};
  cal::Id cid = 1;
  for (auto at : {10h, 16h, 20h}) {
    food.questions.push_back(question(cid, 200 + cid, start + at, end, daily, Category::WA,
                                      "Have you had any food or drink since the last question?",
                                      {"Snack", "Drink", "Snack and drink", "Nothing"}, QuestionType::SingleChoice));
    ++cid;
  }

  plan.calendars = {{1, {general}, {}}, {2, {diary}, {}}, {3, {food}, {}}};
  return plan;
}

cal::ExperimentPlan time_diary_plan(Instant start, std::string user, Duration location_period, int days,
                                    std::vector<cal::Category> categories) {
  cal::ExperimentPlan plan;
  plan.user = std::move(user);
  Instant phase1 = start + 8h;
  int first_days = std::min(days, 14);
  int second_days = std::max(0, days - 14);
  cal::ContextCollection diary{1, diary_questions(start, 1, phase1, 30min, std::uint64_t(48 * first_days),
                                                  first_days * kDay),
                               {}, {}};
  if (second_days > 0) {
    auto second = diary_questions(start, 11, phase1 + first_days * kDay, 1h, std::uint64_t(24 * second_days),
                                  second_days * kDay);
    diary.questions.insert(diary.questions.end(), second.begin(), second.end());
  }
  if (!categories.empty())
    std::erase_if(diary.questions, [&](const cal::QuestionCollection& q) {
      return std::find(categories.begin(), categories.end(), q.question.category) == categories.end();
    });
  Instant end = start + days * kDay;
  auto per_day = std::uint64_t(kDay / location_period);
  diary.sensors.push_back(sensor(1, "Location", "Location information using GPS connections", start, end,
                                 {Frequency::Minute, std::uint64_t(location_period / kMinute),
                                  per_day * std::uint64_t(days)}));
  diary.sensors.push_back(sensor(2, "WIFI Network Connected to", "Connected Wi-Fi network", start, end,
                                 {Frequency::Daily, 1, std::uint64_t(days)}));
  plan.calendars = {{2, {diary}, {}}};
  return plan;
}

} // namespace ilog::catalog
