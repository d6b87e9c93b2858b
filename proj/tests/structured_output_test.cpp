#include <gtest/gtest.h>

#include <array>
#include <random>

#include "promptreg/errors.hpp"
#include "promptreg/structured_output.hpp"

using namespace promptreg;
using nlohmann::json;

namespace {

template <std::size_t N>
json parse(std::string_view text, const std::array<std::string_view, N>& keys) {
  return parse_json_object(text, keys);
}

}  // namespace

TEST(ParseJsonObject, PlainObject) {
  const auto j = parse(R"({"purified_gradient": "x"})", std::array<std::string_view, 1>{"purified_gradient"});
  EXPECT_EQ(j["purified_gradient"], "x");
}

TEST(ParseJsonObject, FencedObject) {
  const auto j = parse("```json\n{\"guidance\": \"g\"}\n```", std::array<std::string_view, 1>{"guidance"});
  EXPECT_EQ(j, json({{"guidance", "g"}}));
}

TEST(ParseJsonObject, SurroundingProseAndBracesInStrings) {
  const auto j = parse("Sure! {not json} Here: {\"guidance\": \"use {braces} and \\\"quotes\\\"\"} done.",
                       std::array<std::string_view, 1>{"guidance"});
  EXPECT_EQ(j["guidance"], "use {braces} and \"quotes\"");
}

TEST(ParseJsonObject, NoJson) {
  try {
    parse("no json here", std::array<std::string_view, 0>{});
    FAIL();
  } catch (const MalformedOutput& e) {
    EXPECT_STREQ(e.what(), "malformed structured output");
  }
}

TEST(ParseJsonObject, MissingFieldNamesKey) {
  try {
    parse(R"({"other": 1})", std::array<std::string_view, 1>{"guidance"});
    FAIL();
  } catch (const MissingField& e) {
    EXPECT_STREQ(e.what(), "missing field guidance");
    EXPECT_EQ(e.key(), "guidance");
  }
}

TEST(ParseJsonObject, UnclosedObject) {
  EXPECT_THROW(parse(R"({"guidance": "g")", std::array<std::string_view, 1>{"guidance"}), MalformedOutput);
}

TEST(ParseJsonObject, RoundTripOfStageSchemas) {
  const json objects[] = {
      {{"purified_gradient", "Enumerate constraints before ordering objects."}},
      {{"operations", json::array({{{"type", "increment"}, {"rule_id", "R1"}, {"value", 1}},
                                   {{"type", "insert"}, {"canonical_description", "List items"}, {"value", 1}}})}},
      {{"rules_changed", json::array({{{"description", "count tomatoes as vegetables"}, {"type", "CASE_PATCH"}}})},
       {"specificity_direction", "increase"}},
      {{"guidance", "Merge the two redundant ordering rules into one sentence."}},
  };
  for (const auto& v : objects) {
    std::vector<std::string> key_store;
    for (const auto& [k, _] : v.items()) key_store.push_back(k);
    std::vector<std::string_view> keys(key_store.begin(), key_store.end());
    EXPECT_EQ(parse_json_object(v.dump(), keys), v);
    EXPECT_EQ(parse_json_object(v.dump(2), keys), v);
  }
}

TEST(ExtractTagged, Examples) {
  EXPECT_EQ(extract_tagged_variable("<IMPROVED>new prompt</IMPROVED>", "<IMPROVED>", "</IMPROVED>"), "new prompt");
  EXPECT_EQ(extract_tagged_variable("x <A> first </A> y <A>second</A>", "<A>", "</A>"), "first");
  try {
    extract_tagged_variable("<A> never closed", "<A>", "</A>");
    FAIL();
  } catch (const TagsAbsent& e) {
    EXPECT_STREQ(e.what(), "variable tags absent");
  }
  EXPECT_THROW(extract_tagged_variable("nothing", "<A>", "</A>"), TagsAbsent);
  EXPECT_THROW(extract_tagged_variable("</A> before <A>", "<A>", "</A>"), TagsAbsent);
}

TEST(ExtractTagged, LeftInverseOfWrapping) {
  std::mt19937_64 rng(99);
  const std::string alphabet = "ab <>/\n\t xyz{}";
  for (int i = 0; i < 2000; ++i) {
    std::string s;
    const auto n = rng() % 40;
    for (std::size_t k = 0; k < n; ++k) s += alphabet[rng() % alphabet.size()];
    if (s.find("<T>") != std::string::npos || s.find("</T>") != std::string::npos) continue;
    EXPECT_EQ(extract_tagged_variable("<T>" + s + "</T>", "<T>", "</T>"), std::string(trim(s))) << s;
  }
}
