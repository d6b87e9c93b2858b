#pragma once

// One completion contract for every LLM-realized operator. A Gateway routes a
// request to the engine configured for its role, bounds concurrent in-flight
// calls, counts calls per role and records every exchange to a transcript.

#include <array>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace promptreg {

enum class Role { Forward, Gradient, Regularization, Optimizer };

inline constexpr std::array<Role, 4> kAllRoles = {Role::Forward, Role::Gradient,
                                                  Role::Regularization, Role::Optimizer};

std::string_view to_string(Role role) noexcept;
/// Case-insensitive; accepts "FORWARD", "gradient", ...
std::optional<Role> parse_role(std::string_view text) noexcept;

struct EngineConfig {
  std::string name = "default";
  std::string endpoint;  // base URL, e.g. https://api.openai.com/v1
  std::string model_id;
  std::string auth_env_var;  // empty: send no Authorization header
  int max_new_tokens = 2000;
  double temperature = 0.0;
  double top_p = 0.99;
  double timeout_seconds = 300.0;
};

void to_json(nlohmann::json& j, const EngineConfig& e);
void from_json(const nlohmann::json& j, EngineConfig& e);

struct RoleAssignment {
  EngineConfig forward;
  EngineConfig gradient;
  EngineConfig regularization;
  EngineConfig optimizer;

  static RoleAssignment uniform(const EngineConfig& engine);
  const EngineConfig& for_role(Role role) const noexcept;
  EngineConfig& for_role(Role role) noexcept;
};

struct ChatRequest {
  Role role = Role::Forward;
  std::string system;
  std::string user;
  int step = 0;
};

class Backend {
 public:
  virtual ~Backend() = default;
  /// Returns the raw model text. May be called concurrently.
  virtual std::string complete(const EngineConfig& engine, const ChatRequest& request) = 0;
};

struct RetryPolicy {
  /// One entry per retry; the initial attempt is not counted.
  std::vector<std::chrono::milliseconds> backoff = {std::chrono::seconds(1), std::chrono::seconds(4),
                                                    std::chrono::seconds(16)};
};

/// OpenAI-compatible chat-completions client.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(RetryPolicy policy = {});
  std::string complete(const EngineConfig& engine, const ChatRequest& request) override;

  /// JSON request body sent for `request`.
  static nlohmann::json request_body(const EngineConfig& engine, const ChatRequest& request);

 private:
  RetryPolicy policy_;
};

struct Fixture {
  Role role = Role::Forward;
  std::optional<int> step;
  std::optional<std::string> match_substring;
  std::string response;
};

void to_json(nlohmann::json& j, const Fixture& f);
void from_json(const nlohmann::json& j, Fixture& f);

/// Replays stored responses. A fixture applies when its role matches, its
/// step is null or equal to the request's, and its substring is null or
/// occurs in `system + "\n" + user`. Among applicable fixtures the most
/// specific wins: step-keyed over unkeyed, then substring over none, then the
/// longer substring, then file order.
class ScriptedBackend final : public Backend {
 public:
  explicit ScriptedBackend(std::vector<Fixture> fixtures);
  static ScriptedBackend from_file(const std::filesystem::path& path);
  std::string complete(const EngineConfig& engine, const ChatRequest& request) override;

  const std::vector<Fixture>& fixtures() const noexcept { return fixtures_; }

 private:
  std::vector<Fixture> fixtures_;
};

std::vector<Fixture> load_fixtures(const std::filesystem::path& path);
void save_fixtures(const std::filesystem::path& path, std::span<const Fixture> fixtures);

/// Turns a transcript into fixtures that reproduce every recorded exchange.
std::vector<Fixture> fixtures_from_transcript(const std::filesystem::path& transcript);

/// Haystack that fixture substrings are matched against.
std::string fixture_haystack(const ChatRequest& request);

struct TranscriptEntry {
  int step = 0;
  Role role = Role::Forward;
  std::string system;
  std::string user;
  std::string response;
  long long latency_ms = 0;
};

std::vector<TranscriptEntry> load_transcript(const std::filesystem::path& path);

/// Append-only JSONL writer shared by concurrent callers.
class TranscriptRecorder {
 public:
  explicit TranscriptRecorder(std::filesystem::path path);
  void append(const ChatRequest& request, std::string_view response,
              std::chrono::milliseconds latency);
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mutex_;
  std::ofstream out_;
};

inline constexpr std::string_view kJsonRepairInstruction =
    "\n\nYour previous reply could not be parsed. Respond with valid JSON only.";

struct GatewayOptions {
  std::ptrdiff_t max_in_flight = 8;
};

class Gateway {
 public:
  Gateway(std::shared_ptr<Backend> backend, RoleAssignment engines, GatewayOptions options = {});

  /// Routes by role. Backend errors propagate unchanged.
  std::string complete(const ChatRequest& request);

  /// Completes and parses a JSON object. On a malformed reply the request is
  /// re-asked once with kJsonRepairInstruction appended; a second failure throws.
  nlohmann::json complete_json(const ChatRequest& request, std::span<const std::string_view> required_keys);

  /// Completes and extracts a tagged span, re-asking once with a reminder of
  /// the tags. A second failure throws TagsAbsent.
  std::string complete_tagged(const ChatRequest& request, std::string_view start_tag,
                              std::string_view end_tag);

  void record_to(std::filesystem::path transcript);

  std::size_t calls(Role role) const noexcept;
  std::size_t total_calls() const noexcept;
  const RoleAssignment& engines() const noexcept { return engines_; }

 private:
  std::shared_ptr<Backend> backend_;
  RoleAssignment engines_;
  std::counting_semaphore<1024> in_flight_;
  std::array<std::atomic<std::size_t>, 4> calls_{};
  std::unique_ptr<TranscriptRecorder> recorder_;
};

}  // namespace promptreg
