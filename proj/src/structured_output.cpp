#include "promptreg/structured_output.hpp"

#include <cctype>

#include "promptreg/errors.hpp"

namespace promptreg {
namespace {

// Index one past the '}' that closes the object opened at `open`, or npos.
std::size_t match_object(std::string_view text, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i + 1;
    }
  }
  return std::string_view::npos;
}

}  // namespace

std::string_view trim(std::string_view s) noexcept {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

nlohmann::json parse_json_object(std::string_view text, std::span<const std::string_view> required_keys) {
  for (auto open = text.find('{'); open != std::string_view::npos; open = text.find('{', open + 1)) {
    const auto end = match_object(text, open);
    if (end == std::string_view::npos) continue;
    auto parsed = nlohmann::json::parse(text.substr(open, end - open), nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object()) continue;
    for (const auto key : required_keys) {
      if (!parsed.contains(key)) throw MissingField(std::string(key));
    }
    return parsed;
  }
  throw MalformedOutput("malformed structured output");
}

std::string extract_tagged_variable(std::string_view text, std::string_view start_tag,
                                    std::string_view end_tag) {
  const auto start = text.find(start_tag);
  if (start == std::string_view::npos) throw TagsAbsent();
  const auto body = start + start_tag.size();
  const auto end = text.find(end_tag, body);
  if (end == std::string_view::npos) throw TagsAbsent();
  return std::string(trim(text.substr(body, end - body)));
}

}  // namespace promptreg
