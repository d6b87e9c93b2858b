#include "promptreg/edit_regularization.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include "promptreg/errors.hpp"
#include "promptreg/llm_gateway.hpp"
#include "promptreg/structured_output.hpp"
#include "promptreg/templates.hpp"

namespace promptreg {
namespace {

std::string lower(std::string_view text) {
  std::string out(trim(text));
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

}  // namespace

std::string_view to_string(RuleChangeKind kind) noexcept {
  switch (kind) {
    case RuleChangeKind::GeneralizedRule: return "GENERALIZED_RULE";
    case RuleChangeKind::CasePatch: return "CASE_PATCH";
    case RuleChangeKind::StyleOnly: return "STYLE_ONLY";
  }
  return "CASE_PATCH";
}

std::optional<RuleChangeKind> parse_rule_change_kind(std::string_view text) noexcept {
  const std::string t = lower(text);
  if (t == "generalized_rule") return RuleChangeKind::GeneralizedRule;
  if (t == "case_patch") return RuleChangeKind::CasePatch;
  if (t == "style_only") return RuleChangeKind::StyleOnly;
  return std::nullopt;
}

std::string_view to_string(SpecificityDirection d) noexcept {
  switch (d) {
    case SpecificityDirection::Increase: return "increase";
    case SpecificityDirection::Decrease: return "decrease";
    case SpecificityDirection::Neutral: return "neutral";
  }
  return "neutral";
}

std::optional<SpecificityDirection> parse_specificity_direction(std::string_view text) noexcept {
  const std::string t = lower(text);
  if (t == "increase") return SpecificityDirection::Increase;
  if (t == "decrease") return SpecificityDirection::Decrease;
  if (t == "neutral") return SpecificityDirection::Neutral;
  return std::nullopt;
}

SpecificitySign to_sign(SpecificityDirection d) noexcept {
  switch (d) {
    case SpecificityDirection::Increase: return SpecificitySign::Positive;
    case SpecificityDirection::Decrease: return SpecificitySign::Negative;
    case SpecificityDirection::Neutral: return SpecificitySign::Zero;
  }
  return SpecificitySign::Zero;
}

std::string_view to_string(RegMode mode) noexcept {
  switch (mode) {
    case RegMode::NoRegularization: return "NO_REGULARIZATION";
    case RegMode::CompressionOnly: return "COMPRESSION_ONLY";
    case RegMode::GeneralizeOnly: return "GENERALIZE_ONLY";
    case RegMode::StrongRegularization: return "STRONG_REGULARIZATION";
  }
  return "NO_REGULARIZATION";
}

RegMode regularization_mode(ChannelSet active) noexcept {
  const bool c = active.contains(Channel::Capacity);
  const bool w = active.contains(Channel::Scope);
  if (c && w) return RegMode::StrongRegularization;
  if (c) return RegMode::CompressionOnly;
  if (w) return RegMode::GeneralizeOnly;
  return RegMode::NoRegularization;
}

SemanticDiff semantic_diff(const SemanticDiffInputs& in, StageContext& ctx) {
  if (in.previous.version + 1 != in.current.version) {
    throw DomainError("semantic_diff needs consecutive versions, got " + std::to_string(in.previous.version) +
                      " -> " + std::to_string(in.current.version));
  }
  ChatRequest request;
  request.role = Role::Regularization;
  request.step = ctx.step;
  request.user = PromptTemplate::asset(kSemanticDiffTemplate)
                     .render({{"initial_prompt", in.initial.text},
                              {"previous_prompt", in.previous.text},
                              {"current_prompt", in.current.text},
                              {"rulebank_summary", in.bank.summarize(in.summary_rules)},
                              {"gradient_contexts", render_execution_contexts(in.gradient_contexts)}});
  static constexpr std::array<std::string_view, 2> keys = {"rules_changed", "specificity_direction"};
  try {
    const auto reply = ctx.gateway.complete_json(request, keys);
    const auto& direction = reply["specificity_direction"];
    const auto parsed = direction.is_string() ? parse_specificity_direction(direction.get<std::string>())
                                              : std::nullopt;
    if (!parsed) throw MalformedOutput("unknown specificity_direction " + direction.dump());
    if (!reply["rules_changed"].is_array()) throw MalformedOutput("rules_changed is not a list");
    SemanticDiff diff;
    diff.specificity_direction = *parsed;
    for (const auto& item : reply["rules_changed"]) {
      const auto description = item.is_object() ? item.find("description") : item.end();
      const auto type = item.is_object() ? item.find("type") : item.end();
      const auto kind = type != item.end() && type->is_string() ? parse_rule_change_kind(type->get<std::string>())
                                                                 : std::nullopt;
      if (description == item.end() || !description->is_string() || !kind) {
        ctx.warn("semantic diff entry dropped: " + item.dump());
        continue;
      }
      diff.rules_changed.push_back({description->get<std::string>(), *kind});
    }
    return diff;
  } catch (const MalformedOutput& e) {
    ctx.warn(std::string("semantic diff output unusable, assuming no change: ") + e.what());
    return SemanticDiff{};
  }
}

bool scope_trigger(const SemanticDiff& diff) noexcept {
  return diff.specificity_direction == SpecificityDirection::Increase;
}

ChannelDiagnostics diagnose(const PromptVersion& prev, const PromptVersion& curr, const SemanticDiff& diff,
                            double tau_c) {
  ChannelDiagnostics d;
  d.rho_c = capacity_growth(prev, curr);
  d.b_c = capacity_trigger(d.rho_c, tau_c);
  d.b_w = scope_trigger(diff);
  d.sgn_delta_w = to_sign(diff.specificity_direction);
  d.active = active_channels(d.b_c, d.b_w);
  return d;
}

std::string render_rule_changes(std::span<const RuleChange> changes) {
  if (changes.empty()) return "(none)";
  std::string out;
  for (const auto& c : changes) {
    if (!out.empty()) out += '\n';
    out += "- [" + std::string(to_string(c.kind)) + "] " + c.description;
  }
  return out;
}

std::optional<RegGradient> synthesize_reg_gradient(const ChannelDiagnostics& diag, const SemanticDiff& diff,
                                                   const PromptVersion& curr, StageContext& ctx) {
  const RegMode mode = regularization_mode(diag.active);
  if (mode == RegMode::NoRegularization) return std::nullopt;
  ChatRequest request;
  request.role = Role::Regularization;
  request.step = ctx.step;
  request.user = PromptTemplate::asset(kRegGradientTemplate)
                     .render({{"regularization_mode", std::string(to_string(mode))},
                              {"current_prompt", curr.text},
                              {"newly_changed_rules", render_rule_changes(diff.rules_changed)}});
  static constexpr std::array<std::string_view, 1> keys = {"guidance"};
  try {
    const auto reply = ctx.gateway.complete_json(request, keys);
    if (!reply["guidance"].is_string()) throw MalformedOutput("guidance is not a string");
    std::string guidance(trim(reply["guidance"].get<std::string>()));
    if (guidance.empty()) {
      ctx.warn("regularization guidance is empty; no regularization this step");
      return std::nullopt;
    }
    return RegGradient{std::move(guidance), mode};
  } catch (const MalformedOutput& e) {
    ctx.warn(std::string("regularization generator output unusable: ") + e.what());
    return std::nullopt;
  }
}

}  // namespace promptreg
