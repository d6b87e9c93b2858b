#include <fstream>
#include <tuple>

#include "promptreg/errors.hpp"
#include "promptreg/llm_gateway.hpp"
#include "promptreg/structured_output.hpp"

namespace promptreg {

void to_json(nlohmann::json& j, const Fixture& f) {
  j = nlohmann::ordered_json{
      {"role", to_string(f.role)},
      {"step", f.step ? nlohmann::json(*f.step) : nlohmann::json(nullptr)},
      {"match_substring", f.match_substring ? nlohmann::json(*f.match_substring) : nlohmann::json(nullptr)},
      {"response", f.response}};
}

void from_json(const nlohmann::json& j, Fixture& f) {
  const auto role = parse_role(j.at("role").get<std::string>());
  if (!role) throw ConfigError("unknown role " + j.at("role").get<std::string>());
  f.role = *role;
  f.step.reset();
  f.match_substring.reset();
  if (j.contains("step") && !j.at("step").is_null()) f.step = j.at("step").get<int>();
  if (j.contains("match_substring") && !j.at("match_substring").is_null()) {
    f.match_substring = j.at("match_substring").get<std::string>();
  }
  f.response = j.at("response").get<std::string>();
}

std::vector<Fixture> load_fixtures(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open fixtures " + path.string());
  std::vector<Fixture> fixtures;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw ConfigError("fixtures line " + std::to_string(number) + ": not a JSON object");
    }
    try {
      fixtures.push_back(j.get<Fixture>());
    } catch (const std::exception& ex) {
      throw ConfigError("fixtures line " + std::to_string(number) + ": " + ex.what());
    }
  }
  return fixtures;
}

void save_fixtures(const std::filesystem::path& path, std::span<const Fixture> fixtures) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write fixtures " + path.string());
  for (const auto& f : fixtures) out << nlohmann::json(f).dump() << '\n';
  if (!out) throw Error("cannot write fixtures " + path.string());
}

std::string fixture_haystack(const ChatRequest& request) {
  return request.system + "\n" + request.user;
}

std::vector<Fixture> fixtures_from_transcript(const std::filesystem::path& transcript) {
  std::vector<Fixture> fixtures;
  for (auto& e : load_transcript(transcript)) {
    ChatRequest r{e.role, std::move(e.system), std::move(e.user), e.step};
    fixtures.push_back(Fixture{r.role, r.step, fixture_haystack(r), std::move(e.response)});
  }
  return fixtures;
}

ScriptedBackend::ScriptedBackend(std::vector<Fixture> fixtures) : fixtures_(std::move(fixtures)) {}

ScriptedBackend ScriptedBackend::from_file(const std::filesystem::path& path) {
  return ScriptedBackend(load_fixtures(path));
}

std::string ScriptedBackend::complete(const EngineConfig&, const ChatRequest& request) {
  const std::string haystack = fixture_haystack(request);
  const Fixture* best = nullptr;
  auto rank = [](const Fixture& f) {
    return std::tuple(f.step.has_value(), f.match_substring.has_value(),
                      f.match_substring ? f.match_substring->size() : std::size_t{0});
  };
  for (const auto& f : fixtures_) {
    if (f.role != request.role) continue;
    if (f.step && *f.step != request.step) continue;
    if (f.match_substring && haystack.find(*f.match_substring) == std::string::npos) continue;
    if (!best || rank(f) > rank(*best)) best = &f;
  }
  if (!best) {
    throw FixtureMiss("fixture miss: (" + std::string(to_string(request.role)) + ", step " +
                      std::to_string(request.step) + ")");
  }
  return best->response;
}

}  // namespace promptreg
