#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "promptreg/core_metrics.hpp"

namespace promptreg {

class Gateway;

struct Sample {
  std::string question;
  std::string answer;
};

/// JSONL, one {"question": str, "answer": str} per line. Numeric answers are
/// accepted and stored in their JSON text form. Blank lines are skipped; CR
/// before LF is ignored. Throws ConfigError naming the offending line.
std::vector<Sample> load_dataset(const std::filesystem::path& path);
std::vector<Sample> parse_dataset(std::string_view text);

enum class ExtractionRule {
  MarkerThenNumber,  // text after the last "answer:", else last number, else everything
  LastNumber,        // last number, else everything
  FullOutput,
};

ExtractionRule parse_extraction_rule(std::string_view name);
std::string_view to_string(ExtractionRule rule) noexcept;

/// Trim, collapse whitespace, strip trailing . , ; : ! ? and canonicalize plain
/// decimal numerals ("007" -> "7", "7.50" -> "7.5", "1,000" -> "1000").
/// Idempotent.
std::string normalize_answer(std::string_view text);

std::string extract_answer(std::string_view raw_output,
                           ExtractionRule rule = ExtractionRule::MarkerThenNumber);

bool exact_match(std::string_view extracted, std::string_view gold);

struct SampleResult {
  bool correct = false;
  std::string extracted;
  std::string raw_output;
};

struct EvalReport {
  std::string dataset;
  std::string engine;
  int prompt_version = 0;
  double accuracy = 0.0;
  std::vector<SampleResult> per_sample;

  nlohmann::ordered_json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static EvalReport load(const std::filesystem::path& path);
};

struct EvalOptions {
  std::string dataset_name = "dataset";
  std::size_t concurrency_cap = 8;
  int step = 0;  // request step tag
  ExtractionRule extraction = ExtractionRule::MarkerThenNumber;
};

/// One FORWARD call per sample under `prompt` as system message. Results keep
/// dataset order whatever the completion order. Any failed call aborts the
/// whole report.
EvalReport evaluate(const PromptVersion& prompt, std::span<const Sample> dataset, Gateway& gateway,
                    const EvalOptions& options = {});

/// train accuracy - OOD accuracy (the 0/1-loss generalization gap). Throws
/// ConfigError when the reports were produced by different prompt versions.
double generalization_gap(const EvalReport& ood, const EvalReport& train);

/// Plain-text engine x dataset accuracy table (percent, one decimal).
std::string render_report_table(std::span<const EvalReport> reports);

/// Runs fn(i) for i in [0, n) on up to `cap` threads; rethrows the first failure
/// after all workers stop.
void parallel_for(std::size_t n, std::size_t cap, const std::function<void(std::size_t)>& fn);

}  // namespace promptreg
