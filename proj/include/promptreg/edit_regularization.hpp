#pragma once

// Stage 2: diagnose the last realized transition along the capacity channel
// (relative token growth against tau_C) and the scope channel (sign of the
// narrowness change judged by the semantic diff analyzer), then turn the
// active channels into a textual regularization gradient.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "promptreg/core_metrics.hpp"
#include "promptreg/gradient_purification.hpp"
#include "promptreg/rulebank.hpp"
#include "promptreg/stage.hpp"

namespace promptreg {

enum class RuleChangeKind { GeneralizedRule, CasePatch, StyleOnly };

std::string_view to_string(RuleChangeKind kind) noexcept;
std::optional<RuleChangeKind> parse_rule_change_kind(std::string_view text) noexcept;

struct RuleChange {
  std::string description;
  RuleChangeKind kind = RuleChangeKind::CasePatch;

  bool operator==(const RuleChange&) const = default;
};

enum class SpecificityDirection { Increase, Decrease, Neutral };

std::string_view to_string(SpecificityDirection d) noexcept;
std::optional<SpecificityDirection> parse_specificity_direction(std::string_view text) noexcept;
SpecificitySign to_sign(SpecificityDirection d) noexcept;

struct SemanticDiff {
  std::vector<RuleChange> rules_changed;
  SpecificityDirection specificity_direction = SpecificityDirection::Neutral;

  bool operator==(const SemanticDiff&) const = default;
};

enum class RegMode { NoRegularization, CompressionOnly, GeneralizeOnly, StrongRegularization };

std::string_view to_string(RegMode mode) noexcept;

/// {} -> NO_REGULARIZATION, {C} -> COMPRESSION_ONLY, {W} -> GENERALIZE_ONLY,
/// {C, W} -> STRONG_REGULARIZATION.
RegMode regularization_mode(ChannelSet active) noexcept;

struct RegGradient {
  std::string guidance;
  RegMode mode = RegMode::NoRegularization;
};

struct SemanticDiffInputs {
  const PromptVersion& previous;
  const PromptVersion& current;
  const PromptVersion& initial;
  const RuleBank& bank;
  std::span<const ExecutionContext> gradient_contexts;
  std::size_t summary_rules = kDefaultSummaryRules;
};

/// Semantic diff analyzer through the REGULARIZATION engine. Requires
/// consecutive versions. A malformed reply degrades to ([], neutral) with a
/// warning.
SemanticDiff semantic_diff(const SemanticDiffInputs& in, StageContext& ctx);

/// b_W: only the direction matters, never the rule list.
bool scope_trigger(const SemanticDiff& diff) noexcept;

ChannelDiagnostics diagnose(const PromptVersion& prev, const PromptVersion& curr, const SemanticDiff& diff,
                            double tau_c);

/// "- [TYPE] description" per change, or "(none)".
std::string render_rule_changes(std::span<const RuleChange> changes);

/// No backend call when nothing is active. Malformed or empty guidance
/// degrades to nullopt with a warning.
std::optional<RegGradient> synthesize_reg_gradient(const ChannelDiagnostics& diag, const SemanticDiff& diff,
                                                   const PromptVersion& curr, StageContext& ctx);

}  // namespace promptreg
