#pragma once

// Verbatim prompt assets with named `{placeholder}` slots. Rendering is exact
// substitution of the declared names; `{{` and `}}` collapse to single braces;
// every other character of the asset is copied through unchanged.

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace promptreg {

namespace assets {
struct AssetEntry {
  std::string_view name;
  std::string_view text;
};
std::span<const AssetEntry> all();
}  // namespace assets

using Bindings = std::map<std::string, std::string, std::less<>>;

class PromptTemplate {
 public:
  PromptTemplate(std::string name, std::string_view text, std::vector<std::string> placeholders);

  /// Looks up an embedded asset by file stem (e.g. "purify").
  static const PromptTemplate& asset(std::string_view name);

  /// Throws ConfigError if a declared placeholder is unbound or an
  /// undeclared name is bound.
  std::string render(const Bindings& bindings) const;

  const std::string& name() const noexcept { return name_; }
  std::string_view text() const noexcept { return text_; }
  const std::vector<std::string>& placeholders() const noexcept { return placeholders_; }

  /// The literal pieces between placeholder occurrences (escapes collapsed),
  /// in order. render() output is these pieces interleaved with the bound values.
  struct Segment {
    bool is_placeholder;
    std::string value;  // literal text or placeholder name
  };
  const std::vector<Segment>& segments() const noexcept { return segments_; }

 private:
  std::string name_;
  std::string_view text_;
  std::vector<std::string> placeholders_;
  std::vector<Segment> segments_;
};

// Asset names.
inline constexpr std::string_view kPurifyTemplate = "purify";
inline constexpr std::string_view kCanonicalizeTemplate = "rulebank_canonicalize";
inline constexpr std::string_view kSemanticDiffTemplate = "semantic_diff";
inline constexpr std::string_view kRegGradientTemplate = "reg_gradient";
inline constexpr std::string_view kUpdateSystemTemplate = "update_system";
inline constexpr std::string_view kUpdateTrailingTemplate = "update_trailing";
inline constexpr std::string_view kUpdateUserTemplate = "update_user";
inline constexpr std::string_view kUpdateRegSectionTemplate = "update_reg_section";
inline constexpr std::string_view kRawGradientSystemTemplate = "raw_gradient_system";
inline constexpr std::string_view kRawGradientUserTemplate = "raw_gradient_user";

}  // namespace promptreg
