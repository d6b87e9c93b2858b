#include "promptreg/prompt_updater.hpp"

#include "promptreg/llm_gateway.hpp"
#include "promptreg/structured_output.hpp"
#include "promptreg/templates.hpp"

namespace promptreg {

UpdateMessages build_update_messages(const PromptVersion& prompt, const std::string& task_gradient,
                                     const std::optional<RegGradient>& reg, std::string_view role_desc,
                                     const UpdateTags& tags) {
  if (task_gradient.empty()) throw DomainError("build_update_messages needs a task gradient");
  UpdateMessages out;
  out.system = PromptTemplate::asset(kUpdateSystemTemplate)
                   .render({{"new_variable_start_tag", tags.start}, {"new_variable_end_tag", tags.end}});
  std::string reg_section;
  if (reg) {
    reg_section = PromptTemplate::asset(kUpdateRegSectionTemplate).render({{"reg_feedback", reg->guidance}});
  }
  out.user = PromptTemplate::asset(kUpdateUserTemplate)
                 .render({{"variable_desc", std::string(role_desc)},
                          {"variable_short", prompt.text},
                          {"reg_section", reg_section},
                          {"variable_grad", "<FEEDBACK>" + task_gradient + "</FEEDBACK>"}});
  if (reg) {
    out.user += '\n';
    out.user += PromptTemplate::asset(kUpdateTrailingTemplate).render({{"variable_desc", std::string(role_desc)}});
  }
  out.includes_reg_section = reg.has_value();
  return out;
}

PromptVersion apply_update(const PromptVersion& prompt, const std::string& task_gradient,
                           const std::optional<RegGradient>& reg, StageContext& ctx, std::string_view role_desc,
                           const UpdateTags& tags, const TokenCounter& counter) {
  const auto messages = build_update_messages(prompt, task_gradient, reg, role_desc, tags);
  ChatRequest request;
  request.role = Role::Optimizer;
  request.step = ctx.step;
  request.system = messages.system;
  request.user = messages.user;
  std::string text;
  try {
    text = ctx.gateway.complete_tagged(request, tags.start, tags.end);
  } catch (const TagsAbsent&) {
    throw UpdateExtractionFailed();
  }
  if (trim(text).empty()) throw UpdateExtractionFailed();
  return PromptVersion::make(std::move(text), prompt.version + 1, counter);
}

}  // namespace promptreg
