#include <httplib.h>

#include <cstdlib>
#include <thread>

#include "promptreg/errors.hpp"
#include "promptreg/llm_gateway.hpp"

namespace promptreg {
namespace {

struct Target {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Target split_endpoint(const std::string& endpoint) {
  const auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("engine endpoint must start with http:// or https://: " + endpoint);
  }
  const auto path_start = endpoint.find('/', scheme_end + 3);
  Target t;
  t.origin = endpoint.substr(0, path_start);
  t.path = path_start == std::string::npos ? "" : endpoint.substr(path_start);
  while (!t.path.empty() && t.path.back() == '/') t.path.pop_back();
  constexpr std::string_view suffix = "/chat/completions";
  if (t.path.size() < suffix.size() || t.path.compare(t.path.size() - suffix.size(), suffix.size(), suffix) != 0) {
    t.path += suffix;
  }
  return t;
}

bool transient_status(int status) { return status == 429 || (status >= 500 && status <= 599); }

}  // namespace

HttpBackend::HttpBackend(RetryPolicy policy) : policy_(std::move(policy)) {}

nlohmann::json HttpBackend::request_body(const EngineConfig& engine, const ChatRequest& request) {
  nlohmann::json messages = nlohmann::json::array();
  if (!request.system.empty()) messages.push_back({{"role", "system"}, {"content", request.system}});
  messages.push_back({{"role", "user"}, {"content", request.user}});
  return nlohmann::json{{"model", engine.model_id},
                        {"messages", std::move(messages)},
                        {"temperature", engine.temperature},
                        {"top_p", engine.top_p},
                        {"max_tokens", engine.max_new_tokens}};
}

std::string HttpBackend::complete(const EngineConfig& engine, const ChatRequest& request) {
  httplib::Headers headers;
  if (!engine.auth_env_var.empty()) {
    const char* key = std::getenv(engine.auth_env_var.c_str());
    if (key == nullptr || *key == '\0') {
      throw BackendUnavailable("backend unavailable: missing credential (" + engine.auth_env_var + ")");
    }
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const Target target = split_endpoint(engine.endpoint);
  const std::string body = request_body(engine, request).dump();

  httplib::Client client(target.origin);
  const auto timeout = std::chrono::duration<double>(engine.timeout_seconds);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));

  std::string last_failure;
  for (std::size_t attempt = 0;; ++attempt) {
    auto result = client.Post(target.path, headers, body, "application/json");
    if (!result) {
      last_failure = httplib::to_string(result.error());
    } else if (result->status >= 200 && result->status < 300) {
      const auto j = nlohmann::json::parse(result->body, nullptr, false);
      if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
        throw BackendUnavailable("backend unavailable: unexpected response shape");
      }
      const auto& message = j["choices"][0].value("message", nlohmann::json::object());
      const auto content = message.find("content");
      if (content == message.end() || !content->is_string()) {
        throw BackendUnavailable("backend unavailable: response has no message content");
      }
      return content->get<std::string>();
    } else if (transient_status(result->status)) {
      last_failure = "HTTP " + std::to_string(result->status);
    } else {
      throw RequestRejected(result->status, result->body);
    }
    if (attempt >= policy_.backoff.size()) break;
    std::this_thread::sleep_for(policy_.backoff[attempt]);
  }
  throw BackendUnavailable("backend unavailable: " + last_failure + " after " +
                           std::to_string(policy_.backoff.size() + 1) + " attempts");
}

}  // namespace promptreg
