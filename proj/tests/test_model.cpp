#include <gtest/gtest.h>

#include <sstream>

#include "helpers.hpp"
#include "tlab/model.hpp"
#include "tlab/synth.hpp"

using namespace tlab;
using tlab::testing::conversation;

namespace {

Dataset two_conversations() {
  return {conversation("a1", 0, {0, 1, 2}, Closure::closed, Rating::positive),
          conversation("a1", 1, {0, 1, 2}, Closure::disengaged, Rating::unrated)};
}

std::size_t count_kind(const ValidationReport& r, ViolationKind k) {
  return static_cast<std::size_t>(std::count_if(r.begin(), r.end(), [&](const Violation& v) { return v.kind == k; }));
}

}  // namespace

TEST(Validate, WellFormedDatasetIsClean) { EXPECT_TRUE(validate_dataset(two_conversations()).empty()); }

TEST(Validate, DayOutOfRange) {
  auto d = two_conversations();
  d[0].shift.day_of_week = 9;
  const auto r = validate_dataset(d);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].kind, ViolationKind::range);
  EXPECT_EQ(r[0].record_index, 0u);
}

TEST(Validate, HourBlockAndWindowRanges) {
  auto d = two_conversations();
  d[0].shift.hour_block = 4;
  d[1].shift.window_index = -1;
  EXPECT_EQ(count_kind(validate_dataset(d), ViolationKind::range), 2u);
}

TEST(Validate, DuplicateIndex) {
  auto d = two_conversations();
  d[1].agent_conversation_index = 0;
  const auto r = validate_dataset(d);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].kind, ViolationKind::uniqueness);
}

TEST(Validate, DuplicateConversationId) {
  auto d = two_conversations();
  d[1].conversation_id = d[0].conversation_id;
  EXPECT_EQ(count_kind(validate_dataset(d), ViolationKind::uniqueness), 1u);
}

TEST(Validate, DecreasingTimestamps) {
  auto d = two_conversations();
  d[0].messages[2].timestamp_s = 1.0;
  EXPECT_EQ(count_kind(validate_dataset(d), ViolationKind::ordering), 1u);
}

TEST(Validate, MissingRole) {
  auto d = two_conversations();
  for (auto& m : d[0].messages) m.sender = Sender::client;
  EXPECT_EQ(count_kind(validate_dataset(d), ViolationKind::missing_role), 1u);
}

TEST(Validate, IsPure) {
  auto d = two_conversations();
  d[0].shift.day_of_week = 9;
  d[1].agent_conversation_index = 0;
  EXPECT_EQ(validate_dataset(d), validate_dataset(d));
  EXPECT_FALSE(format_report(validate_dataset(d)).empty());
}

TEST(Jsonl, RoundTripIsFieldIdentical) {
  auto d = two_conversations();
  d[0].circumstance = Circumstance{0.25, -1.5, Issue::depression};
  d[1].messages[1].tokens.clear();
  d[1].messages[1].timestamp_s = 61.123456789012345;
  std::stringstream ss;
  write_jsonl(ss, d);
  const auto back = read_jsonl(ss);
  EXPECT_TRUE(back.problems.empty());
  EXPECT_EQ(back.records, d);
}

TEST(Jsonl, GeneratedDataRoundTrips) {
  GeneratorConfig cfg;
  cfg.n_agents = 4;
  cfg.conversations_per_agent = 6;
  const auto p = generate(cfg);
  std::stringstream ss;
  write_jsonl(ss, p.dataset);
  const auto back = read_jsonl(ss);
  EXPECT_TRUE(back.problems.empty());
  EXPECT_EQ(back.records, p.dataset);
  EXPECT_TRUE(validate_dataset(back.records).empty());
}

TEST(Jsonl, MalformedLinesAreReported) {
  std::stringstream ss;
  ss << to_json_line(two_conversations()[0]) << "\n"
     << "{not json\n"
     << R"({"conversation_id":"x","agent_id":"a","agent_conversation_index":0,"shift":{"window_index":0,"day_of_week":0,"hour_block":0},"messages":[],"rating":"unrated"})"
     << "\n";
  const auto r = read_jsonl(ss);
  EXPECT_EQ(r.records.size(), 1u);
  ASSERT_EQ(r.problems.size(), 2u);
  EXPECT_EQ(r.problems[0].record_index, 1u);
  EXPECT_EQ(r.problems[1].record_index, 2u);  // closure missing
}

TEST(Jsonl, EnumsAreLowercaseStrings) {
  const auto line = to_json_line(two_conversations()[0]);
  EXPECT_NE(line.find("\"rating\":\"positive\""), std::string::npos);
  EXPECT_NE(line.find("\"closure\":\"closed\""), std::string::npos);
  EXPECT_NE(line.find("\"sender\":\"client\""), std::string::npos);
}

TEST(Outcomes, HasOutcomeAndValue) {
  auto r = conversation("a", 0, {}, Closure::disengaged, Rating::unrated);
  EXPECT_FALSE(has_outcome(r, Outcome::rating));
  EXPECT_TRUE(has_outcome(r, Outcome::closure));
  EXPECT_EQ(outcome_value(r, Outcome::closure), 0);
  r.rating = Rating::positive;
  EXPECT_EQ(outcome_value(r, Outcome::rating), 1);
}

TEST(ShiftKey, FieldwiseEquality) {
  EXPECT_EQ((ShiftKey{1, 2, 3}), (ShiftKey{1, 2, 3}));
  EXPECT_NE((ShiftKey{1, 2, 3}), (ShiftKey{1, 2, 2}));
  EXPECT_LT((ShiftKey{0, 6, 3}), (ShiftKey{1, 0, 0}));
}
