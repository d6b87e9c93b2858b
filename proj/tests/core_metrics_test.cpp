#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "promptreg/core_metrics.hpp"
#include "promptreg/errors.hpp"
#include "promptreg/templates.hpp"

using namespace promptreg;

namespace {

PromptVersion tokens(std::size_t n) {
  PromptVersion p;
  p.token_count = n;
  return p;
}

}  // namespace

TEST(TokenCount, EmptyAndWhitespaceRuns) {
  EXPECT_EQ(count_whitespace_tokens(""), 0u);
  EXPECT_EQ(count_whitespace_tokens("a b c"), 3u);
  EXPECT_EQ(count_whitespace_tokens("  a\t\tb\n c  "), 3u);
  EXPECT_EQ(count_whitespace_tokens(" \n\t "), 0u);
}

TEST(TokenCount, UpdateSystemAssetFrozen) {
  // Computed once with str.split() over the stored asset.
  const auto& t = PromptTemplate::asset(kUpdateSystemTemplate);
  EXPECT_EQ(count_whitespace_tokens(t.text()), 115u);
}

TEST(PromptVersion, MakeCountsTokens) {
  const auto p = PromptVersion::make("one two  three", 4);
  EXPECT_EQ(p.token_count, 3u);
  EXPECT_EQ(p.version, 4);
  const TokenCounter chars = [](std::string_view s) { return s.size(); };
  EXPECT_EQ(PromptVersion::make("abcd", 0, chars).token_count, 4u);
}

TEST(CapacityGrowth, Examples) {
  EXPECT_EQ(capacity_growth(tokens(100), tokens(100)), 0.0);
  EXPECT_EQ(capacity_growth(tokens(100), tokens(125)), 0.25);
  EXPECT_EQ(capacity_growth(tokens(200), tokens(150)), -0.25);
}

TEST(CapacityGrowth, ZeroPreviousIsDegenerate) {
  try {
    capacity_growth(tokens(0), tokens(3));
    FAIL() << "expected DomainError";
  } catch (const DomainError& e) {
    EXPECT_STREQ(e.what(), "degenerate transition");
  }
}

TEST(CapacityTrigger, StrictBoundary) {
  EXPECT_TRUE(capacity_trigger(0.25, 0.2));
  EXPECT_FALSE(capacity_trigger(0.2, 0.2));
  EXPECT_FALSE(capacity_trigger(-0.1, 0.2));
  EXPECT_THROW(capacity_trigger(0.0, -1.0), DomainError);
}

TEST(ThresholdFromLog, Examples) {
  EXPECT_EQ(threshold_from_log(0.0), 0.0);
  EXPECT_NEAR(threshold_from_log(std::log(1.2)), 0.2, 1e-12);
  EXPECT_NEAR(threshold_from_log(1.0), 1.718281828459045, 1e-15);
}

TEST(Inefficiency, Examples) {
  EXPECT_EQ(inefficiency(100, ScopeEstimate::from_mean_scope(0.75)), 25.0);
  EXPECT_EQ(inefficiency(100, ScopeEstimate::from_mean_scope(1.0)), 0.0);
  EXPECT_EQ(inefficiency(0, ScopeEstimate::from_mean_scope(0.0)), 0.0);
}

TEST(ScopeEstimate, NarrownessComplementsScope) {
  for (double s : {0.0, 0.1, 0.25, 0.5, 0.9, 1.0}) {
    const auto e = ScopeEstimate::from_mean_scope(s);
    EXPECT_EQ(e.mean_scope() + e.narrowness(), 1.0);
  }
  EXPECT_THROW(ScopeEstimate::from_mean_scope(-0.01), DomainError);
  EXPECT_THROW(ScopeEstimate::from_mean_scope(1.01), DomainError);
  EXPECT_THROW(ScopeEstimate::from_mean_scope(std::nan("")), DomainError);
}

TEST(LogDecomposition, Examples) {
  auto [a, b] = log_decomposition(100, 0.25, 100, 0.25);
  EXPECT_EQ(a, 0.0);
  EXPECT_EQ(b, 0.0);
  auto [c, d] = log_decomposition(100, 0.25, 120, 0.25);
  EXPECT_DOUBLE_EQ(c, std::log(1.2));
  EXPECT_EQ(d, 0.0);
  auto [e, f] = log_decomposition(100, 0.2, 110, 0.3);
  EXPECT_NEAR(e + f, std::log((110 * 0.3) / (100 * 0.2)), 1e-12);
}

TEST(LogDecomposition, NonpositiveInputs) {
  for (auto args : {std::array{0.0, 0.2, 1.0, 0.2}, std::array{1.0, 0.0, 1.0, 0.2}, std::array{1.0, 0.2, -1.0, 0.2},
                    std::array{1.0, 0.2, 1.0, 0.0}}) {
    try {
      log_decomposition(args[0], args[1], args[2], args[3]);
      FAIL() << "expected DomainError";
    } catch (const DomainError& e) {
      EXPECT_STREQ(e.what(), "log-decomposition undefined");
    }
  }
}

TEST(ActiveChannels, ExhaustiveFourCases) {
  for (bool bc : {false, true}) {
    for (bool bw : {false, true}) {
      const ChannelSet s = active_channels(bc, bw);
      EXPECT_EQ(s.contains(Channel::Capacity), bc);
      EXPECT_EQ(s.contains(Channel::Scope), bw);
      EXPECT_EQ(s.empty(), !bc && !bw);
    }
  }
}

TEST(FormulaProperties, RandomizedTenThousandCases) {
  const auto check = oracle::formula_suite(20261014, 10000);
  EXPECT_TRUE(check.ok) << check.detail;
}
