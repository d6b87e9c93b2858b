#pragma once

// Stage 3: one guided rewrite through the OPTIMIZER engine. The task gradient
// always goes in; the regularization section and its trailing instruction are
// added only when a regularization gradient exists, so an unregularized step
// produces exactly the plain textual-gradient message.

#include <optional>
#include <string>

#include "promptreg/core_metrics.hpp"
#include "promptreg/edit_regularization.hpp"
#include "promptreg/errors.hpp"
#include "promptreg/stage.hpp"

namespace promptreg {

struct UpdateTags {
  std::string start = "<IMPROVED_VARIABLE>";
  std::string end = "</IMPROVED_VARIABLE>";

  bool operator==(const UpdateTags&) const = default;
};

inline constexpr std::string_view kDefaultRoleDescription =
    "system prompt that guides the model to solve the task";

struct UpdateMessages {
  std::string system;
  std::string user;
  bool includes_reg_section = false;
};

class UpdateExtractionFailed : public Error {
 public:
  UpdateExtractionFailed() : Error("update extraction failed") {}
};

/// Throws DomainError on an empty task gradient.
UpdateMessages build_update_messages(const PromptVersion& prompt, const std::string& task_gradient,
                                     const std::optional<RegGradient>& reg,
                                     std::string_view role_desc = kDefaultRoleDescription,
                                     const UpdateTags& tags = {});

/// Sends the messages to the OPTIMIZER engine and reads the tagged variable.
/// Throws UpdateExtractionFailed when the tags are still missing after the
/// gateway's re-ask or the extracted text is empty.
PromptVersion apply_update(const PromptVersion& prompt, const std::string& task_gradient,
                           const std::optional<RegGradient>& reg, StageContext& ctx,
                           std::string_view role_desc = kDefaultRoleDescription, const UpdateTags& tags = {},
                           const TokenCounter& counter = default_token_counter());

/// False when there is no task gradient to apply.
inline bool noop_guard(const std::optional<std::string>& task_gradient) noexcept {
  return task_gradient.has_value() && !task_gradient->empty();
}

}  // namespace promptreg
