#include "promptreg/llm_gateway.hpp"

#include <algorithm>
#include <cctype>

#include "promptreg/errors.hpp"
#include "promptreg/structured_output.hpp"

namespace promptreg {

std::string_view to_string(Role role) noexcept {
  switch (role) {
    case Role::Forward: return "FORWARD";
    case Role::Gradient: return "GRADIENT";
    case Role::Regularization: return "REGULARIZATION";
    case Role::Optimizer: return "OPTIMIZER";
  }
  return "FORWARD";
}

std::optional<Role> parse_role(std::string_view text) noexcept {
  std::string upper(text);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  for (const auto role : kAllRoles) {
    if (to_string(role) == upper) return role;
  }
  return std::nullopt;
}

void to_json(nlohmann::json& j, const EngineConfig& e) {
  j = nlohmann::json{{"name", e.name},
                     {"endpoint", e.endpoint},
                     {"model_id", e.model_id},
                     {"auth_env_var", e.auth_env_var},
                     {"max_new_tokens", e.max_new_tokens},
                     {"temperature", e.temperature},
                     {"top_p", e.top_p},
                     {"timeout_seconds", e.timeout_seconds}};
}

void from_json(const nlohmann::json& j, EngineConfig& e) {
  e = EngineConfig{};
  e.name = j.value("name", e.name);
  e.endpoint = j.value("endpoint", e.endpoint);
  e.model_id = j.value("model_id", e.model_id);
  e.auth_env_var = j.value("auth_env_var", e.auth_env_var);
  e.max_new_tokens = j.value("max_new_tokens", e.max_new_tokens);
  e.temperature = j.value("temperature", e.temperature);
  e.top_p = j.value("top_p", e.top_p);
  e.timeout_seconds = j.value("timeout_seconds", e.timeout_seconds);
}

RoleAssignment RoleAssignment::uniform(const EngineConfig& engine) {
  return RoleAssignment{engine, engine, engine, engine};
}

const EngineConfig& RoleAssignment::for_role(Role role) const noexcept {
  switch (role) {
    case Role::Forward: return forward;
    case Role::Gradient: return gradient;
    case Role::Regularization: return regularization;
    case Role::Optimizer: return optimizer;
  }
  return forward;
}

EngineConfig& RoleAssignment::for_role(Role role) noexcept {
  return const_cast<EngineConfig&>(std::as_const(*this).for_role(role));
}

Gateway::Gateway(std::shared_ptr<Backend> backend, RoleAssignment engines, GatewayOptions options)
    : backend_(std::move(backend)),
      engines_(std::move(engines)),
      in_flight_(std::clamp<std::ptrdiff_t>(options.max_in_flight, 1, 1024)) {
  if (!backend_) throw ConfigError("gateway requires a backend");
}

void Gateway::record_to(std::filesystem::path transcript) {
  recorder_ = std::make_unique<TranscriptRecorder>(std::move(transcript));
}

std::string Gateway::complete(const ChatRequest& request) {
  calls_[static_cast<std::size_t>(request.role)].fetch_add(1, std::memory_order_relaxed);
  in_flight_.acquire();
  const auto started = std::chrono::steady_clock::now();
  std::string response;
  try {
    response = backend_->complete(engines_.for_role(request.role), request);
  } catch (...) {
    in_flight_.release();
    throw;
  }
  in_flight_.release();
  if (recorder_) {
    recorder_->append(request, response,
                      std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - started));
  }
  return response;
}

nlohmann::json Gateway::complete_json(const ChatRequest& request,
                                      std::span<const std::string_view> required_keys) {
  try {
    return parse_json_object(complete(request), required_keys);
  } catch (const MalformedOutput&) {
  }
  ChatRequest again = request;
  again.user += kJsonRepairInstruction;
  return parse_json_object(complete(again), required_keys);
}

std::string Gateway::complete_tagged(const ChatRequest& request, std::string_view start_tag,
                                     std::string_view end_tag) {
  try {
    return extract_tagged_variable(complete(request), start_tag, end_tag);
  } catch (const TagsAbsent&) {
  }
  ChatRequest again = request;
  again.user += "\n\nYou MUST send the improved variable between ";
  again.user += start_tag;
  again.user += " and ";
  again.user += end_tag;
  again.user += " tags.";
  return extract_tagged_variable(complete(again), start_tag, end_tag);
}

std::size_t Gateway::calls(Role role) const noexcept {
  return calls_[static_cast<std::size_t>(role)].load(std::memory_order_relaxed);
}

std::size_t Gateway::total_calls() const noexcept {
  std::size_t total = 0;
  for (const auto role : kAllRoles) total += calls(role);
  return total;
}

TranscriptRecorder::TranscriptRecorder(std::filesystem::path path) : path_(std::move(path)) {
  out_.open(path_, std::ios::app | std::ios::binary);
  if (!out_) throw Error("cannot open transcript " + path_.string());
}

void TranscriptRecorder::append(const ChatRequest& request, std::string_view response,
                                std::chrono::milliseconds latency) {
  nlohmann::ordered_json line;
  line["step"] = request.step;
  line["role"] = to_string(request.role);
  line["system"] = request.system;
  line["user"] = request.user;
  line["response"] = response;
  line["latency_ms"] = latency.count();
  const std::string text = line.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
  std::lock_guard lock(mutex_);
  out_.write(text.data(), static_cast<std::streamsize>(text.size()));
  out_.flush();
  if (!out_) throw Error("transcript write failed: " + path_.string());
}

std::vector<TranscriptEntry> load_transcript(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open transcript " + path.string());
  std::vector<TranscriptEntry> entries;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw ConfigError("transcript line " + std::to_string(number) + ": not a JSON object");
    }
    try {
      TranscriptEntry e;
      e.step = j.at("step").get<int>();
      const auto role = parse_role(j.at("role").get<std::string>());
      if (!role) throw ConfigError("unknown role");
      e.role = *role;
      e.system = j.at("system").get<std::string>();
      e.user = j.at("user").get<std::string>();
      e.response = j.at("response").get<std::string>();
      e.latency_ms = j.value("latency_ms", 0LL);
      entries.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw ConfigError("transcript line " + std::to_string(number) + ": " + ex.what());
    }
  }
  return entries;
}

}  // namespace promptreg
