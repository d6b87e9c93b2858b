#pragma once

// The per-step pipeline: regularize the last accepted transition, critique
// and purify on a fresh mini-batch, rewrite, and keep the rewrite only if
// validation accuracy does not fall below the relaxed bound. Every decision
// goes to trace.jsonl; state.json after each step makes runs resumable.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "promptreg/core_metrics.hpp"
#include "promptreg/edit_regularization.hpp"
#include "promptreg/eval_harness.hpp"
#include "promptreg/gradient_purification.hpp"
#include "promptreg/llm_gateway.hpp"
#include "promptreg/prompt_updater.hpp"
#include "promptreg/rulebank.hpp"

namespace promptreg {

inline constexpr std::string_view kDefaultInitialPrompt =
    "You will answer a reasoning question. Think step by step. The last line of your response should be of the "
    "following format: 'Answer: $VALUE' where VALUE is the final answer.";

struct RunConfig {
  int batch_size = 3;
  int iterations = 12;
  double tau_c = 0.2;
  double acceptance_relaxation = 0.0;
  std::uint64_t seed = 0;
  RoleAssignment engines;
  UpdateTags tags;
  std::string role_desc{kDefaultRoleDescription};
  std::string initial_prompt{kDefaultInitialPrompt};
  std::filesystem::path train_path;
  std::filesystem::path val_path;
  std::filesystem::path run_dir;
  std::size_t val_limit = 0;  // 0: the whole validation split
  std::size_t concurrency = 8;
  ExtractionRule extraction = ExtractionRule::MarkerThenNumber;
  std::string rule_scope = CanonicalizeOptions{}.rule_scope;
  std::string rule_patterns = CanonicalizeOptions{}.rule_patterns;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  nlohmann::ordered_json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

using Transition = std::pair<PromptVersion, PromptVersion>;

struct RunState {
  PromptVersion initial;
  PromptVersion current;
  PromptVersion best;
  double current_val = 0.0;
  double best_val = 0.0;
  RuleBank bank;
  std::optional<Transition> last_transition;
  std::vector<ExecutionContext> contexts_of_last_step;
  int next_step = 0;
  std::size_t trace_lines = 0;
  std::size_t metrics_lines = 0;

  nlohmann::ordered_json to_json() const;
  static RunState from_json(const nlohmann::json& j);
};

/// Sample indices for `step`: a window of batch_size over a seed-shuffled
/// permutation of [0, n), wrapping around.
std::vector<std::size_t> next_batch_indices(std::size_t n, int step, int batch_size, std::uint64_t seed);
std::vector<Sample> next_batch(std::span<const Sample> train, int step, int batch_size, std::uint64_t seed);

/// candidate >= current - relaxation.
bool validation_gate(double candidate_val, double current_val, double relaxation) noexcept;

struct StepOutcome {
  nlohmann::ordered_json trace;
  nlohmann::ordered_json metrics;
  std::optional<PromptVersion> accepted;
};

struct Datasets {
  std::vector<Sample> train;
  std::vector<Sample> val;
};

Datasets load_datasets(const RunConfig& config);

/// Initial state: p_0 evaluated on validation, empty bank.
RunState initial_state(const RunConfig& config, const Datasets& data, Gateway& gateway,
                       nlohmann::ordered_json* init_record = nullptr);

/// Runs one step in place. Backend failures outside regularization propagate
/// and leave `state` untouched.
StepOutcome run_step(RunState& state, const RunConfig& config, const Datasets& data, Gateway& gateway);

struct RunOptions {
  bool resume = false;
  std::optional<int> halt_before_step;  // stop once next_step reaches this
};

struct RunResult {
  PromptVersion optimized;
  PromptVersion best;
  double best_val = 0.0;
  int steps_completed = 0;
  bool finished = false;
};

/// Executes the configured iterations under config.run_dir. A fresh run
/// refuses an existing state.json; a resume refuses a config that differs
/// from the snapshot. Corrupt state throws StateError.
RunResult run(const RunConfig& config, std::shared_ptr<Backend> backend, const RunOptions& options = {});

/// File names inside a run directory.
namespace run_files {
inline constexpr std::string_view kConfigSnapshot = "config.snapshot";
inline constexpr std::string_view kState = "state.json";
inline constexpr std::string_view kRuleBank = "rulebank.json";
inline constexpr std::string_view kTrace = "trace.jsonl";
inline constexpr std::string_view kMetrics = "metrics.jsonl";
inline constexpr std::string_view kTranscript = "transcript.jsonl";
inline constexpr std::string_view kOptimizedPrompt = "optimized_prompt.txt";
inline constexpr std::string_view kBestPrompt = "best_prompt.txt";
std::string prompt_file(int version);
}  // namespace run_files

}  // namespace promptreg
