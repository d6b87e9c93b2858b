#pragma once

// Stage 1: critique the prompt on a mini-batch, then keep only critiques the
// purifier judges broadly applicable. Accepted critiques are the only path
// into the RuleBank (see canonicalize_and_match, which demands a
// PurifiedGradient).

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "promptreg/core_metrics.hpp"
#include "promptreg/eval_harness.hpp"
#include "promptreg/rulebank.hpp"
#include "promptreg/stage.hpp"

namespace promptreg {

struct ExecutionContext {
  std::string sample_input;
  std::string model_output;
  std::string expected;
  bool correct = false;

  bool operator==(const ExecutionContext&) const = default;
};

/// Block form used in every template slot that carries execution contexts.
std::string render_execution_contexts(std::span<const ExecutionContext> contexts);

struct RawGradient {
  std::string text;
  std::vector<ExecutionContext> contexts;
  int step = 0;
};

namespace testing {
struct PurifiedGradientFactory;
}

class PurifiedGradient;

std::optional<PurifiedGradient> purify(const RawGradient& raw, const RuleBank& bank,
                                       const PromptVersion& prompt, StageContext& ctx,
                                       std::size_t summary_rules = kDefaultSummaryRules);

/// A critique that survived purification. Only purify() creates these.
class PurifiedGradient {
 public:
  const std::string& text() const noexcept { return text_; }
  int source_step() const noexcept { return source_step_; }

 private:
  PurifiedGradient(std::string text, int source_step) : text_(std::move(text)), source_step_(source_step) {}

  friend std::optional<PurifiedGradient> purify(const RawGradient&, const RuleBank&, const PromptVersion&,
                                                StageContext&, std::size_t);
  friend struct testing::PurifiedGradientFactory;

  std::string text_;
  int source_step_;
};

/// Runs the prompt on every batch sample through the FORWARD engine.
std::vector<ExecutionContext> forward_eval(const PromptVersion& prompt, std::span<const Sample> batch,
                                           StageContext& ctx, const EvalOptions& options = {});

double batch_accuracy(std::span<const ExecutionContext> contexts);

/// Asks the GRADIENT engine for a critique; the reply is the raw gradient verbatim.
RawGradient generate_raw_gradient(const PromptVersion& prompt, std::vector<ExecutionContext> contexts,
                                  StageContext& ctx);

/// Texts joined by blank lines, in order; nullopt when nothing survived.
std::optional<std::string> assemble_task_gradient(std::span<const PurifiedGradient> purified);

struct CanonicalizeOptions {
  std::string rule_scope = "mid-level behavioral";
  std::string rule_patterns = "reasoning-procedure patterns";
  std::size_t summary_rules = kDefaultSummaryRules;
};

/// Canonicalize-then-match against the bank through the GRADIENT engine.
/// Returns only ops valid against `bank`; dropped ops and malformed replies
/// are reported through ctx.warn and never throw.
std::vector<RuleBankOp> canonicalize_and_match(const PurifiedGradient& gradient, const RuleBank& bank,
                                               StageContext& ctx, const CanonicalizeOptions& options = {});

}  // namespace promptreg
