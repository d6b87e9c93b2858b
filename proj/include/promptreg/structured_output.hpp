#pragma once

#include <span>
#include <string>
#include <string_view>

#include <json.hpp>

namespace promptreg {

/// Finds the first balanced top-level JSON object in `text` (ignoring any
/// prose or code fences around it) and checks that every required key is
/// present. Throws MalformedOutput("malformed structured output") or
/// MissingField naming the first absent key.
nlohmann::json parse_json_object(std::string_view text,
                                 std::span<const std::string_view> required_keys = {});

/// Content between the first `start_tag` and the next `end_tag`, trimmed.
/// Throws TagsAbsent.
std::string extract_tagged_variable(std::string_view text, std::string_view start_tag,
                                    std::string_view end_tag);

/// Trims ASCII whitespace from both ends.
std::string_view trim(std::string_view s) noexcept;

}  // namespace promptreg
