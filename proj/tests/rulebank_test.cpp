#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <type_traits>

#include "oracles.hpp"
#include "promptreg/errors.hpp"
#include "promptreg/gradient_purification.hpp"
#include "promptreg/rulebank.hpp"

using namespace promptreg;

namespace {

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST(RuleBank, InsertIntoEmpty) {
  RuleBank bank;
  const std::vector<RuleBankOp> ops = {RuleBankOp::insert("x")};
  EXPECT_EQ(bank.apply(ops, 4), std::vector<std::string>{"R1"});
  ASSERT_EQ(bank.entries().size(), 1u);
  EXPECT_EQ(bank.entries()[0], (Rule{"R1", "x", 1}));
  EXPECT_EQ(bank.updated_step(), 4);
}

TEST(RuleBank, IncrementExisting) {
  RuleBank bank;
  const std::vector<RuleBankOp> seed = {RuleBankOp::insert("a")};
  bank.apply(seed, 0);
  const std::vector<RuleBankOp> inc = {RuleBankOp::increment("R1")};
  bank.apply(inc, 1);
  bank.apply(inc, 2);
  EXPECT_EQ(bank.find("R1")->mention_count, 3);
}

TEST(RuleBank, InsertThenIncrementMass) {
  RuleBank bank;
  const std::vector<RuleBankOp> seed = {RuleBankOp::insert("a")};
  bank.apply(seed, 0);
  const std::vector<RuleBankOp> ops = {RuleBankOp::insert("y"), RuleBankOp::increment("R1")};
  EXPECT_EQ(bank.apply(ops, 1), (std::vector<std::string>{"R2", "R1"}));
  EXPECT_EQ(bank.total_mentions(), 3);
  EXPECT_EQ(bank.entries().size(), 2u);
}

TEST(RuleBank, InvalidOpLeavesBankUntouched) {
  RuleBank bank;
  const std::vector<RuleBankOp> seed = {RuleBankOp::insert("a")};
  bank.apply(seed, 0);
  const RuleBank before = bank;
  const std::vector<RuleBankOp> ops = {RuleBankOp::increment("R1"), RuleBankOp::increment("R9")};
  EXPECT_THROW(bank.apply(ops, 1), Error);
  EXPECT_EQ(bank, before);
  const std::vector<RuleBankOp> empty_insert = {RuleBankOp::insert("")};
  EXPECT_THROW(bank.apply(empty_insert, 1), Error);
  EXPECT_EQ(bank, before);
}

TEST(RuleBank, SummarizeEmpty) { EXPECT_EQ(RuleBank{}.summarize(), "(empty)"); }

TEST(RuleBank, SummarizeOrdersByCountThenInsertion) {
  RuleBank bank;
  const std::vector<RuleBankOp> ops = {RuleBankOp::insert("b"), RuleBankOp::insert("a"),
                                       RuleBankOp::increment("R2"), RuleBankOp::increment("R2"),
                                       RuleBankOp::insert("c")};
  bank.apply(ops, 0);
  EXPECT_EQ(bank.summarize(),
            "- [R2] a (mention_count=3)\n- [R1] b (mention_count=1)\n- [R3] c (mention_count=1)");
  EXPECT_EQ(bank.summarize(), bank.summarize());
}

TEST(RuleBank, SummarizeFiftyKeepsTwentyHighest) {
  std::mt19937_64 rng(99);
  RuleBank bank;
  std::vector<std::pair<int, int>> oracle_rows;  // (count, ordinal)
  for (int i = 0; i < 50; ++i) {
    const std::vector<RuleBankOp> ins = {RuleBankOp::insert("rule " + std::to_string(i))};
    bank.apply(ins, 0);
    const int extra = static_cast<int>(rng() % 7);
    for (int k = 0; k < extra; ++k) {
      const std::vector<RuleBankOp> inc = {RuleBankOp::increment("R" + std::to_string(i + 1))};
      bank.apply(inc, 0);
    }
    oracle_rows.emplace_back(1 + extra, i);
  }
  std::sort(oracle_rows.begin(), oracle_rows.end(),
            [](auto a, auto b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  const auto lines = lines_of(bank.summarize(20));
  ASSERT_EQ(lines.size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto [count, ordinal] = oracle_rows[i];
    EXPECT_EQ(lines[i], "- [R" + std::to_string(ordinal + 1) + "] rule " + std::to_string(ordinal) +
                            " (mention_count=" + std::to_string(count) + ")");
  }
}

TEST(RuleBank, PersistRoundTrip) {
  oracle::TempDir dir("rulebank");
  RuleBank bank(2);
  const std::vector<RuleBankOp> ops = {RuleBankOp::insert("a"), RuleBankOp::insert("b"), RuleBankOp::insert("c"),
                                       RuleBankOp::increment("R2")};
  bank.apply(ops, 5);
  const auto path = dir.path() / "rulebank.json";
  bank.persist(path);
  EXPECT_EQ(RuleBank::load(path), bank);

  RuleBank empty;
  empty.persist(path);
  const RuleBank loaded = RuleBank::load(path);
  EXPECT_TRUE(loaded.empty());
}

TEST(RuleBank, TruncatedFileIsUnreadable) {
  oracle::TempDir dir("rulebank-trunc");
  RuleBank bank;
  const std::vector<RuleBankOp> ops = {RuleBankOp::insert("a")};
  bank.apply(ops, 0);
  const auto text = bank.to_json_text();
  const auto path = dir.path() / "rulebank.json";
  std::ofstream(path) << text.substr(0, text.size() / 2);
  try {
    RuleBank::load(path);
    FAIL();
  } catch (const StateError& e) {
    EXPECT_NE(std::string(e.what()).find("rulebank unreadable"), std::string::npos);
  }
  EXPECT_THROW(RuleBank::load(dir.path() / "missing.json"), StateError);
  EXPECT_THROW(RuleBank::from_json_text(
                   R"({"created_step":0,"updated_step":0,"entries":[{"id":"R1","canonical_description":"a","mention_count":0}]})"),
               StateError);
}

TEST(RuleBank, ScopeProxy) {
  EXPECT_EQ(scope_proxy(Rule{"R1", "a", 4}), 4.0);
  EXPECT_EQ(scope_proxy(Rule{"R1", "a", 1}), identity_scope_proxy(1));
  for (int m = 1; m < 50; ++m) EXPECT_LE(identity_scope_proxy(m), identity_scope_proxy(m + 1));
  const ScopeProxy log_psi = [](int m) { return std::log1p(m); };
  EXPECT_GE(scope_proxy(Rule{"R1", "a", 5}, log_psi), scope_proxy(Rule{"R1", "a", 2}, log_psi));
}

TEST(RuleBank, MatchesHandSimulation) {
  const auto check = oracle::rulebank_equivalence(20261014, 1000);
  EXPECT_TRUE(check.ok) << check.detail;
}

// Bank updates require a purified gradient; the raw-gradient path has no
// route to them.
static_assert(!std::is_constructible_v<PurifiedGradient, std::string>);
static_assert(!std::is_constructible_v<PurifiedGradient, RawGradient>);
static_assert(!std::is_invocable_v<decltype(&canonicalize_and_match), const RawGradient&, const RuleBank&,
                                   StageContext&, const CanonicalizeOptions&>);
