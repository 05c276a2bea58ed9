#include <doctest.h>

#include <random>

#include "ilog/context.hpp"
#include "ilog/errors.hpp"

using namespace ilog;
using namespace ilog::context;

namespace {

Instant at(int h, int m = 0) { return make_instant(2020, 11, 12, h, m); }

SituationalContext ctx(std::string id, Instant s, Instant e, std::string place = "office") {
  SituationalContext c;
  c.id = std::move(id);
  c.start = s;
  c.end = e;
  c.we = std::move(place);
  c.wa = {"meeting"};
  return c;
}

// The everyday-life scenario: home, commute, a meeting in the office, lunch.
LifeSequence everyday() {
  LifeSequence seq{"ME", "a working day", {}};
  seq = append_context(seq, ctx("T1", at(7), at(8), "home"));
  seq = append_context(seq, ctx("T2", at(8), at(8, 40), "street"));
  auto meeting = ctx("T3", at(9), at(11), "office");
  meeting.wi = "neutral";
  meeting.wo = {"colleagues"};
  meeting.wu = {"projector", "laptop"};
  seq = append_context(seq, meeting);
  seq = append_context(seq, ctx("T4", at(12), at(13), "canteen"));
  return seq;
}

bool overlaps(const SituationalContext& a, const SituationalContext& b) { return a.start < b.end && b.start < a.end; }

} // namespace

TEST_SUITE("context") {

TEST_CASE("append keeps the sequence ordered") {
  LifeSequence seq;
  seq = append_context(seq, ctx("a", at(12), at(13)));
  CHECK(seq.contexts.size() == 1);
  seq = append_context(seq, ctx("b", at(13), at(13, 30)));
  CHECK(seq.contexts.size() == 2);
  CHECK_THROWS_AS(append_context(seq, ctx("c", at(13, 20), at(14))), OverlapError);
  CHECK_THROWS_AS(append_context(seq, ctx("d", at(15), at(15))), OrderError);
  CHECK_THROWS_AS(append_context(seq, ctx("e", at(16), at(15))), OrderError);
}

TEST_CASE("append against a brute-force overlap scan") {
  std::mt19937_64 rng(11);
  LifeSequence seq;
  Instant cursor = at(0);
  for (int i = 0; i < 400; ++i) {
    auto s = cursor + std::chrono::minutes{std::uniform_int_distribution<int>(-30, 30)(rng)};
    auto e = s + std::chrono::minutes{std::uniform_int_distribution<int>(0, 40)(rng)};
    auto c = ctx("c" + std::to_string(i), s, e);
    bool expect_overlap = !seq.contexts.empty() && s < seq.contexts.back().end;
    try {
      seq = append_context(seq, c);
      CHECK_FALSE(expect_overlap);
      CHECK(s < e);
      cursor = e;
    } catch (const OverlapError&) {
      CHECK(expect_overlap);
    } catch (const OrderError&) {
      CHECK(s >= e);
    }
  }
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < seq.contexts.size(); ++i)
    for (std::size_t j = i + 1; j < seq.contexts.size(); ++j, ++pairs)
      CHECK_FALSE(overlaps(seq.contexts[i], seq.contexts[j]));
  CHECK(pairs > 1000);
  Duration total{0};
  for (const auto& c : seq.contexts) total += c.duration();
  CHECK(total <= seq.contexts.back().end - seq.contexts.front().start);
}

TEST_CASE("context_at uses half-open intervals") {
  auto seq = everyday();
  auto found = context_at(seq, at(10));
  REQUIRE(found);
  CHECK(found->id == "T3");
  CHECK(found->we == "office");
  CHECK_FALSE(context_at(seq, at(8, 50)));
  CHECK_FALSE(context_at(seq, at(11)));  // the end instant is outside
  CHECK(context_at(seq, at(8))->id == "T2");
  CHECK_FALSE(context_at(seq, at(6)));
  CHECK_FALSE(context_at(seq, at(14)));

  // Against a linear membership scan at every minute of the day.
  for (int m = 0; m < 24 * 60; ++m) {
    Instant t = at(0) + std::chrono::minutes{m};
    const SituationalContext* hit = nullptr;
    int matches = 0;
    for (const auto& c : seq.contexts)
      if (c.start <= t && t < c.end) hit = &c, ++matches;
    CHECK(matches <= 1);
    auto got = context_at(seq, t);
    CHECK(got.has_value() == (hit != nullptr));
    if (got && hit) CHECK(got->id == hit->id);
  }
}

TEST_CASE("closed contexts need an activity") {
  auto c = ctx("x", at(1), at(2));
  c.wa.clear();
  CHECK_THROWS_AS(check_context(c), ValidationError);
  c.closed = false;
  CHECK_NOTHROW(check_context(c));
}

TEST_CASE("office meeting graph") {
  auto meeting = everyday().contexts[2];
  std::vector<Entity> entities{
      {"Person", "Bob", {}},
      {"Room", "office", {}},
      {"Place", "workplace", {}},
      {"Furniture", "table", {{"Label", "Office table"}}},
  };
  std::vector<Relation> relations{
      {"office", "PartOf", "workplace"},
      {"Bob", "In", "office"},
      {"table", "In", "office"},
      {"ME", "In", "office"},
  };
  auto g = context_to_graph(meeting, entities, relations);
  CHECK(g.nodes.size() == 5);
  CHECK(g.edges.contains(GraphEdge{"office", "PartOf", "workplace"}));
  CHECK(g.nodes.at("ME").attributes.at("Mood") == "neutral");
  CHECK(g.nodes.at("ME").attributes.at("Name") == "ME");

  auto lone = context_to_graph(meeting, {}, {});
  CHECK(lone.nodes.size() == 1);
  CHECK(lone.edges.empty());

  CHECK_THROWS_AS(context_to_graph(meeting, entities, {{"table", "In", "kitchen"}}), DanglingEdgeError);
  CHECK_THROWS_AS(context_to_graph(meeting, {{"Room", "x", {}}, {"Room", "x", {}}}, {}), ValidationError);

  auto again = parse_graph(serialize_graph(g));
  CHECK(again == g);
}

TEST_CASE("life sequence records round-trip") {
  auto seq = everyday();
  seq.contexts[0].activity_spans = {{"breakfast", at(7), at(7, 20)}};
  seq.contexts[0].wa = {"breakfast", "news"};
  auto text = serialize_life_sequence(seq);
  CHECK(parse_life_sequence(text) == seq);
  CHECK(serialize_life_sequence(parse_life_sequence(text)) == text);
  CHECK_THROWS(parse_life_sequence("{\"record\":\"context\"}\n"));
}

TEST_CASE("profile vocabulary") {
  ProfileVocabulary v{{"F", "M"}, {"BSc", "MSc"}, {"Engineering"}};
  CHECK_NOTHROW(check_profile({"p1", "F", "BSc", "Engineering", "Europe/Rome"}, v));
  CHECK_THROWS_AS(check_profile({"p1", "X", "BSc", "Engineering", "UTC"}, v), ValidationError);
}

}
