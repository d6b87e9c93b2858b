#include "promptreg/gradient_purification.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include "promptreg/errors.hpp"
#include "promptreg/llm_gateway.hpp"
#include "promptreg/structured_output.hpp"
#include "promptreg/templates.hpp"

namespace promptreg {

std::string render_execution_contexts(std::span<const ExecutionContext> contexts) {
  std::string out;
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    const auto& c = contexts[i];
    if (i > 0) out += "\n\n";
    out += "<LM_INPUT>" + c.sample_input + "</LM_INPUT>\n";
    out += "<LM_OUTPUT>" + c.model_output + "</LM_OUTPUT>\n";
    out += "<EXPECTED_ANSWER>" + c.expected + "</EXPECTED_ANSWER>\n";
    out += std::string("<EVALUATION>") + (c.correct ? "correct" : "incorrect") + "</EVALUATION>";
  }
  return out;
}

std::vector<ExecutionContext> forward_eval(const PromptVersion& prompt, std::span<const Sample> batch,
                                           StageContext& ctx, const EvalOptions& options) {
  if (batch.empty()) throw DomainError("forward_eval needs a nonempty batch");
  EvalOptions opts = options;
  opts.step = ctx.step;
  const EvalReport report = evaluate(prompt, batch, ctx.gateway, opts);
  std::vector<ExecutionContext> contexts;
  contexts.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    contexts.push_back({batch[i].question, report.per_sample[i].raw_output, batch[i].answer,
                        report.per_sample[i].correct});
  }
  return contexts;
}

double batch_accuracy(std::span<const ExecutionContext> contexts) {
  if (contexts.empty()) return 0.0;
  const auto correct = std::count_if(contexts.begin(), contexts.end(), [](const auto& c) { return c.correct; });
  return static_cast<double>(correct) / static_cast<double>(contexts.size());
}

RawGradient generate_raw_gradient(const PromptVersion& prompt, std::vector<ExecutionContext> contexts,
                                  StageContext& ctx) {
  if (contexts.empty()) throw DomainError("generate_raw_gradient needs execution contexts");
  ChatRequest request;
  request.role = Role::Gradient;
  request.step = ctx.step;
  request.system = PromptTemplate::asset(kRawGradientSystemTemplate).render({});
  request.user = PromptTemplate::asset(kRawGradientUserTemplate)
                     .render({{"current_prompt", prompt.text},
                              {"execution_context", render_execution_contexts(contexts)}});
  RawGradient raw;
  raw.text = ctx.gateway.complete(request);
  raw.contexts = std::move(contexts);
  raw.step = ctx.step;
  return raw;
}

std::optional<PurifiedGradient> purify(const RawGradient& raw, const RuleBank& bank, const PromptVersion& prompt,
                                       StageContext& ctx, std::size_t summary_rules) {
  if (trim(raw.text).empty()) {
    ctx.warn("raw gradient is empty; nothing to purify");
    return std::nullopt;
  }
  ChatRequest request;
  request.role = Role::Gradient;
  request.step = ctx.step;
  request.user = PromptTemplate::asset(kPurifyTemplate)
                     .render({{"current_prompt", prompt.text},
                              {"gradient_context", render_execution_contexts(raw.contexts)},
                              {"gradient_text", raw.text},
                              {"rulebank_summary", bank.summarize(summary_rules)}});
  static constexpr std::array<std::string_view, 1> keys = {"purified_gradient"};
  try {
    const auto verdict = ctx.gateway.complete_json(request, keys);
    const auto& field = verdict.at("purified_gradient");
    if (!field.is_string()) throw MalformedOutput("purified_gradient is not a string");
    std::string text(trim(field.get<std::string>()));
    if (text.empty()) return std::nullopt;
    return PurifiedGradient(std::move(text), ctx.step);
  } catch (const MalformedOutput& e) {
    ctx.warn(std::string("purifier output unusable, gradient rejected: ") + e.what());
    return std::nullopt;
  }
}

std::optional<std::string> assemble_task_gradient(std::span<const PurifiedGradient> purified) {
  if (purified.empty()) return std::nullopt;
  std::string out;
  for (const auto& g : purified) {
    if (!out.empty()) out += "\n\n";
    out += g.text();
  }
  return out;
}

std::vector<RuleBankOp> canonicalize_and_match(const PurifiedGradient& gradient, const RuleBank& bank,
                                               StageContext& ctx, const CanonicalizeOptions& options) {
  ChatRequest request;
  request.role = Role::Gradient;
  request.step = ctx.step;
  request.user = PromptTemplate::asset(kCanonicalizeTemplate)
                     .render({{"rule_scope", options.rule_scope},
                              {"rule_patterns", options.rule_patterns},
                              {"rulebank_summary", bank.summarize(options.summary_rules)},
                              {"raw_gradient", gradient.text()}});
  static constexpr std::array<std::string_view, 1> keys = {"operations"};
  nlohmann::json reply;
  try {
    reply = ctx.gateway.complete_json(request, keys);
  } catch (const MalformedOutput& e) {
    ctx.warn(std::string("rulebank matcher output unusable, bank unchanged: ") + e.what());
    return {};
  }
  if (!reply["operations"].is_array()) {
    ctx.warn("rulebank matcher output unusable, bank unchanged: operations is not a list");
    return {};
  }

  RuleBank scratch = bank;
  std::vector<RuleBankOp> ops;
  for (const auto& item : reply["operations"]) {
    if (!item.is_object() || !item.contains("type") || !item["type"].is_string()) {
      ctx.warn("rulebank op dropped: missing type");
      continue;
    }
    std::string type = item["type"].get<std::string>();
    std::transform(type.begin(), type.end(), type.begin(), [](unsigned char c) { return std::tolower(c); });
    RuleBankOp op;
    const auto string_field = [&](const char* key) {
      const auto it = item.find(key);
      return it != item.end() && it->is_string() ? it->get<std::string>() : std::string();
    };
    if (type == "increment") {
      op = RuleBankOp::increment(string_field("rule_id"));
    } else if (type == "insert") {
      op = RuleBankOp::insert(std::string(trim(string_field("canonical_description"))));
    } else {
      ctx.warn("rulebank op dropped: unknown type " + type);
      continue;
    }
    if (item.contains("value") && !(item["value"].is_number_integer() && item["value"].get<long long>() == 1)) {
      ctx.warn("rulebank op value " + item["value"].dump() + " treated as 1");
    }
    if (!scratch.valid(op)) {
      ctx.warn(op.kind == RuleBankOp::Kind::Increment ? "rulebank op dropped: unknown rule id " + op.rule_id
                                                      : std::string("rulebank op dropped: empty description"));
      continue;
    }
    scratch.apply(std::span(&op, 1), ctx.step);
    ops.push_back(std::move(op));
  }
  return ops;
}

}  // namespace promptreg
