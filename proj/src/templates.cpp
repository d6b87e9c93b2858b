#include "promptreg/templates.hpp"

#include <algorithm>
#include <mutex>
#include <set>

#include "promptreg/errors.hpp"

namespace promptreg {
namespace {

struct AssetDecl {
  std::string_view name;
  std::vector<std::string> placeholders;
};

const std::vector<AssetDecl>& asset_decls() {
  static const std::vector<AssetDecl> decls = {
      {kPurifyTemplate, {"current_prompt", "gradient_context", "gradient_text", "rulebank_summary"}},
      {kCanonicalizeTemplate, {"rule_scope", "rule_patterns", "rulebank_summary", "raw_gradient"}},
      {kSemanticDiffTemplate,
       {"initial_prompt", "previous_prompt", "current_prompt", "rulebank_summary",
        "gradient_contexts"}},
      {kRegGradientTemplate, {"regularization_mode", "current_prompt", "newly_changed_rules"}},
      {kUpdateSystemTemplate, {"new_variable_start_tag", "new_variable_end_tag"}},
      {kUpdateTrailingTemplate, {"variable_desc"}},
      {kUpdateUserTemplate, {"variable_desc", "variable_short", "reg_section", "variable_grad"}},
      {kUpdateRegSectionTemplate, {"reg_feedback"}},
      {kRawGradientSystemTemplate, {}},
      {kRawGradientUserTemplate, {"current_prompt", "execution_context"}},
  };
  return decls;
}

}  // namespace

PromptTemplate::PromptTemplate(std::string name, std::string_view text,
                               std::vector<std::string> placeholders)
    : name_(std::move(name)), text_(text), placeholders_(std::move(placeholders)) {
  const std::set<std::string, std::less<>> declared(placeholders_.begin(), placeholders_.end());
  std::set<std::string, std::less<>> seen;
  std::string literal;
  for (std::size_t i = 0; i < text_.size();) {
    const char c = text_[i];
    if ((c == '{' || c == '}') && i + 1 < text_.size() && text_[i + 1] == c) {
      literal.push_back(c);
      i += 2;
      continue;
    }
    if (c == '{') {
      const auto close = text_.find('}', i + 1);
      if (close != std::string_view::npos) {
        const auto name_view = text_.substr(i + 1, close - i - 1);
        if (declared.contains(name_view)) {
          if (!literal.empty()) segments_.push_back({false, std::move(literal)});
          literal.clear();
          segments_.push_back({true, std::string(name_view)});
          seen.insert(std::string(name_view));
          i = close + 1;
          continue;
        }
      }
    }
    literal.push_back(c);
    ++i;
  }
  if (!literal.empty()) segments_.push_back({false, std::move(literal)});
  for (const auto& p : placeholders_) {
    if (!seen.contains(p)) {
      throw ConfigError("template " + name_ + " never uses placeholder {" + p + "}");
    }
  }
}

const PromptTemplate& PromptTemplate::asset(std::string_view name) {
  static std::once_flag once;
  static std::vector<PromptTemplate> loaded;
  std::call_once(once, [] {
    for (const auto& decl : asset_decls()) {
      const auto entries = assets::all();
      const auto it = std::find_if(entries.begin(), entries.end(),
                                   [&](const auto& e) { return e.name == decl.name; });
      if (it == entries.end()) {
        throw ConfigError("template asset missing: " + std::string(decl.name));
      }
      loaded.emplace_back(std::string(decl.name), it->text, decl.placeholders);
    }
  });
  for (const auto& t : loaded) {
    if (t.name() == name) return t;
  }
  throw ConfigError("unknown template: " + std::string(name));
}

std::string PromptTemplate::render(const Bindings& bindings) const {
  for (const auto& [key, value] : bindings) {
    if (std::find(placeholders_.begin(), placeholders_.end(), key) == placeholders_.end()) {
      throw ConfigError("template " + name_ + " has no placeholder {" + key + "}");
    }
  }
  std::string out;
  for (const auto& seg : segments_) {
    if (!seg.is_placeholder) {
      out += seg.value;
      continue;
    }
    const auto it = bindings.find(seg.value);
    if (it == bindings.end()) {
      throw ConfigError("template " + name_ + " is missing a binding for {" + seg.value + "}");
    }
    out += it->second;
  }
  return out;
}

}  // namespace promptreg
