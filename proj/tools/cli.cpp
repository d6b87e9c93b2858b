#include "cli.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <unistd.h>

#include "promptreg/errors.hpp"
#include "promptreg/eval_harness.hpp"
#include "promptreg/optimization_loop.hpp"
#include "promptreg/rulebank.hpp"

namespace promptreg::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void require_file(const fs::path& path, const char* what) {
  if (!fs::is_regular_file(path)) throw ConfigError(std::string(what) + " not found: " + path.string());
}

// Flags shared by every command that talks to a model.
struct BackendFlags {
  std::string backend = "http";
  std::string fixtures;
  std::string engines_file;
  std::string endpoint;
  std::string model;
  std::string api_key_env;
  RoleOverrides overrides;

  void add_to(CLI::App& app) {
    app.add_option("--backend", backend, "scripted or http")->check(CLI::IsMember({"scripted", "http"}));
    app.add_option("--fixtures", fixtures, "Scripted fixture JSONL (scripted backend)");
    app.add_option("--engines", engines_file, "Engine configuration JSON");
    app.add_option("--endpoint", endpoint, "OpenAI-compatible base URL for every role");
    app.add_option("--model", model, "Model id for every role");
    app.add_option("--api-key-env", api_key_env, "Environment variable holding the API key");
    app.add_option("--forward-engine", overrides.forward, "Engine name for the FORWARD role");
    app.add_option("--gradient-engine", overrides.gradient, "Engine name for the GRADIENT role");
    app.add_option("--regularization-engine", overrides.regularization,
                   "Engine name for the REGULARIZATION role");
    app.add_option("--optimizer-engine", overrides.optimizer, "Engine name for the OPTIMIZER role");
  }

  RoleAssignment engines() const {
    if (!engines_file.empty()) {
      if (!endpoint.empty() || !model.empty()) {
        throw ConfigError("--engines cannot be combined with --endpoint/--model");
      }
      return load_engines_file(engines_file, overrides);
    }
    const bool any_override = !overrides.forward.empty() || !overrides.gradient.empty() ||
                              !overrides.regularization.empty() || !overrides.optimizer.empty();
    if (any_override) throw ConfigError("per-role engine overrides need --engines");
    EngineConfig e;
    if (backend == "scripted") {
      e.name = "scripted";
      return RoleAssignment::uniform(e);
    }
    if (endpoint.empty() || model.empty()) throw ConfigError("http backend needs --engines or --endpoint and --model");
    e.name = model;
    e.endpoint = endpoint;
    e.model_id = model;
    e.auth_env_var = api_key_env;
    return RoleAssignment::uniform(e);
  }

  std::shared_ptr<Backend> make() const {
    if (backend == "scripted") {
      if (fixtures.empty()) throw ConfigError("scripted backend needs --fixtures");
      require_file(fixtures, "fixtures file");
      return std::make_shared<ScriptedBackend>(ScriptedBackend::from_file(fixtures));
    }
    return std::make_shared<HttpBackend>();
  }
};

int cmd_optimize(const RunConfig& base, const BackendFlags& flags, const std::string& initial_prompt_file,
                 bool resume, std::optional<int> halt, std::ostream& out) {
  RunConfig config = base;
  config.engines = flags.engines();
  if (!initial_prompt_file.empty()) {
    require_file(initial_prompt_file, "initial prompt file");
    config.initial_prompt = read_text(initial_prompt_file);
  }
  config.validate();
  require_file(config.train_path, "train dataset");
  require_file(config.val_path, "validation dataset");
  RunOptions options;
  options.resume = resume;
  options.halt_before_step = halt;
  const RunResult r = promptreg::run(config, flags.make(), options);
  out << "steps_completed=" << r.steps_completed << " finished=" << (r.finished ? "true" : "false") << '\n';
  out << "optimized_version=" << r.optimized.version << " tokens=" << r.optimized.token_count << '\n';
  out << "best_version=" << r.best.version << " best_val=" << fixed4(r.best_val) << '\n';
  out << "run_dir=" << config.run_dir.string() << '\n';
  return kOk;
}

struct EvaluateFlags {
  std::string prompt_file;
  std::string dataset;
  std::string dataset_name;
  std::string report_out;
  std::string gap_train_report;
  int prompt_version = 0;
  std::size_t concurrency = 8;
  std::string extraction = "marker";
};

int cmd_evaluate(const EvaluateFlags& f, const BackendFlags& flags, std::ostream& out) {
  require_file(f.prompt_file, "prompt file");
  require_file(f.dataset, "dataset");
  if (f.concurrency < 1) throw ConfigError("concurrency must be at least 1");
  EvalOptions options;
  options.dataset_name = f.dataset_name.empty() ? fs::path(f.dataset).stem().string() : f.dataset_name;
  options.concurrency_cap = f.concurrency;
  options.extraction = parse_extraction_rule(f.extraction);
  std::optional<EvalReport> train;
  if (!f.gap_train_report.empty()) {
    require_file(f.gap_train_report, "gap report");
    train = EvalReport::load(f.gap_train_report);
  }
  const auto samples = load_dataset(f.dataset);
  const auto prompt = PromptVersion::make(read_text(f.prompt_file), f.prompt_version);
  Gateway gateway(flags.make(), flags.engines(), GatewayOptions{static_cast<std::ptrdiff_t>(f.concurrency)});
  const EvalReport report = evaluate(prompt, samples, gateway, options);
  if (!f.report_out.empty()) report.save(f.report_out);
  out << "accuracy=" << fixed4(report.accuracy) << '\n';
  if (train) out << "gap=" << fixed4(generalization_gap(report, *train)) << '\n';
  return kOk;
}

int cmd_rulebank_show(const std::string& path, std::size_t max_rules, std::ostream& out) {
  require_file(path, "rulebank file");
  out << RuleBank::load(path).summarize(max_rules) << '\n';
  return kOk;
}

std::string step_label(const std::string& line, std::size_t index) {
  try {
    const auto j = json::parse(line);
    if (j.contains("step")) return std::to_string(j["step"].get<int>());
  } catch (const json::exception&) {
  }
  return index == 0 ? "init" : "line " + std::to_string(index + 1);
}

std::vector<std::string> lines_of(const fs::path& path) {
  std::vector<std::string> lines;
  std::ifstream in(path, std::ios::binary);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

int cmd_replay(const std::string& run_dir, const std::string& fixtures_file, const std::string& keep_dir,
               std::ostream& out) {
  const fs::path dir = run_dir;
  const fs::path snapshot = dir / run_files::kConfigSnapshot;
  const fs::path trace = dir / run_files::kTrace;
  require_file(snapshot, "config snapshot");
  require_file(trace, "trace");
  RunConfig config;
  try {
    config = RunConfig::from_json(json::parse(read_text(snapshot)));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config snapshot unreadable: ") + e.what());
  }
  std::vector<Fixture> fixtures;
  if (!fixtures_file.empty()) {
    require_file(fixtures_file, "fixtures file");
    fixtures = load_fixtures(fixtures_file);
  } else {
    const fs::path transcript = dir / run_files::kTranscript;
    require_file(transcript, "transcript");
    try {
      fixtures = fixtures_from_transcript(transcript);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("transcript unreadable: ") + e.what());
    }
  }

  static std::atomic<int> counter{0};
  const bool keep = !keep_dir.empty();
  fs::path replay_dir = keep ? fs::path(keep_dir)
                             : fs::temp_directory_path() / ("promptreg-replay-" + std::to_string(::getpid()) + "-" +
                                                           std::to_string(counter++));
  if (fs::exists(replay_dir / run_files::kState)) throw ConfigError("replay directory already holds a run");
  config.run_dir = replay_dir;

  std::string abort_reason;
  try {
    promptreg::run(config, std::make_shared<ScriptedBackend>(std::move(fixtures)));
  } catch (const Error& e) {
    abort_reason = e.what();
  }

  const auto original = lines_of(trace);
  const auto replayed = lines_of(replay_dir / run_files::kTrace);
  std::vector<std::string> diverged;
  const std::size_t n = std::max(original.size(), replayed.size());
  for (std::size_t i = 0; i < n; ++i) {
    const bool same = i < original.size() && i < replayed.size() && original[i] == replayed[i];
    if (!same) diverged.push_back(step_label(i < original.size() ? original[i] : replayed[i], i));
  }
  if (!keep) {
    std::error_code ec;
    fs::remove_all(replay_dir, ec);
  }
  if (!abort_reason.empty()) out << "replay aborted: " << abort_reason << '\n';
  for (const auto& s : diverged) out << "divergence at step " << s << '\n';
  out << diverged.size() << " divergences" << '\n';
  return kOk;
}

int cmd_report(const std::vector<std::string>& files, std::ostream& out) {
  std::vector<EvalReport> reports;
  for (const auto& f : files) {
    require_file(f, "report");
    reports.push_back(EvalReport::load(f));
  }
  out << render_report_table(reports);
  return kOk;
}

}  // namespace

RoleAssignment resolve_engines(const json& file, const RoleOverrides& overrides) {
  if (!file.is_object() || !file.contains("engines") || !file["engines"].is_object()) {
    throw ConfigError("engines file needs an \"engines\" object");
  }
  const json& engines = file["engines"];
  const json roles = file.value("roles", json::object());
  if (!roles.is_object()) throw ConfigError("engines file: \"roles\" must be an object");
  RoleAssignment out;
  for (Role r : kAllRoles) {
    std::string key(to_string(r));
    for (auto& c : key) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    std::string name;
    switch (r) {
      case Role::Forward: name = overrides.forward; break;
      case Role::Gradient: name = overrides.gradient; break;
      case Role::Regularization: name = overrides.regularization; break;
      case Role::Optimizer: name = overrides.optimizer; break;
    }
    if (name.empty()) name = roles.contains(key) ? roles[key].get<std::string>() : "default";
    if (!engines.contains(name)) throw ConfigError("engine " + name + " for role " + key + " is not defined");
    try {
      EngineConfig e = engines[name].get<EngineConfig>();
      e.name = name;
      out.for_role(r) = std::move(e);
    } catch (const json::exception& ex) {
      throw ConfigError("engine " + name + ": " + ex.what());
    }
  }
  return out;
}

RoleAssignment load_engines_file(const fs::path& path, const RoleOverrides& overrides) {
  require_file(path, "engines file");
  try {
    return resolve_engines(json::parse(read_text(path)), overrides);
  } catch (const json::exception& e) {
    throw ConfigError("engines file unreadable: " + std::string(e.what()));
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Regularized textual-gradient prompt optimizer"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  RunConfig config;
  BackendFlags opt_backend;
  std::string train, val, run_dir, initial_prompt_file;
  bool resume = false;
  std::optional<int> halt;
  auto* optimize = app.add_subcommand("optimize", "Run the optimization loop");
  optimize->add_option("--train", train, "Training JSONL")->required();
  optimize->add_option("--val", val, "Validation JSONL")->required();
  optimize->add_option("--out", run_dir, "Run directory")->required();
  optimize->add_option("--seed", config.seed, "Batch shuffle seed");
  optimize->add_option("--batch-size", config.batch_size, "Samples per step");
  optimize->add_option("--iterations", config.iterations, "Optimization steps");
  optimize->add_option("--tau-c", config.tau_c, "Capacity growth threshold");
  optimize->add_option("--acceptance-relaxation", config.acceptance_relaxation, "Validation gate slack");
  optimize->add_option("--val-limit", config.val_limit, "Use only the first N validation samples (0: all)");
  optimize->add_option("--concurrency", config.concurrency, "Concurrent forward calls");
  std::string opt_extraction = "marker";
  optimize->add_option("--extraction", opt_extraction, "marker, last_number or full");
  optimize->add_option("--initial-prompt-file", initial_prompt_file, "Starting prompt");
  optimize->add_option("--role-desc", config.role_desc, "Role description of the prompt variable");
  optimize->add_option("--start-tag", config.tags.start, "Improved-variable start tag");
  optimize->add_option("--end-tag", config.tags.end, "Improved-variable end tag");
  optimize->add_option("--rule-scope", config.rule_scope, "Rule scope for canonicalization");
  optimize->add_option("--rule-patterns", config.rule_patterns, "Rule patterns for canonicalization");
  optimize->add_flag("--resume", resume, "Continue the run in --out");
  optimize->add_option("--halt-before-step", halt, "Stop once this step is reached");
  opt_backend.add_to(*optimize);

  EvaluateFlags eval_flags;
  BackendFlags eval_backend;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a prompt on a dataset");
  evaluate_cmd->add_option("--prompt-file", eval_flags.prompt_file, "Prompt text")->required();
  evaluate_cmd->add_option("--dataset", eval_flags.dataset, "Dataset JSONL")->required();
  evaluate_cmd->add_option("--dataset-name", eval_flags.dataset_name, "Name recorded in the report");
  evaluate_cmd->add_option("--report-out", eval_flags.report_out, "Write the EvalReport JSON here");
  evaluate_cmd->add_option("--prompt-version", eval_flags.prompt_version, "Version recorded in the report");
  evaluate_cmd->add_option("--gap", eval_flags.gap_train_report,
                           "Training-distribution report; prints train minus this accuracy");
  evaluate_cmd->add_option("--concurrency", eval_flags.concurrency, "Concurrent forward calls");
  evaluate_cmd->add_option("--extraction", eval_flags.extraction, "marker, last_number or full");
  eval_backend.add_to(*evaluate_cmd);

  std::string bank_file;
  std::size_t max_rules = kDefaultSummaryRules;
  auto* rulebank = app.add_subcommand("rulebank", "Inspect a rule bank");
  rulebank->require_subcommand(1);
  auto* show = rulebank->add_subcommand("show", "Print the bank summary");
  show->add_option("bank", bank_file, "rulebank.json")->required();
  show->add_option("--max", max_rules, "Most rules to print");

  std::string replay_run, replay_fixtures, replay_keep;
  auto* replay = app.add_subcommand("replay", "Re-execute a run from recorded responses and diff its trace");
  replay->add_option("run", replay_run, "Run directory")->required();
  replay->add_option("--fixtures", replay_fixtures, "Use these fixtures instead of the run's transcript");
  replay->add_option("--keep", replay_keep, "Keep the replayed run in this directory");

  std::vector<std::string> report_files;
  auto* report = app.add_subcommand("report", "Tabulate EvalReport files by engine and dataset");
  report->add_option("reports", report_files, "EvalReport JSON files")->required();

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*optimize) {
      config.train_path = train;
      config.val_path = val;
      config.run_dir = run_dir;
      config.extraction = parse_extraction_rule(opt_extraction);
      return cmd_optimize(config, opt_backend, initial_prompt_file, resume, halt, out);
    }
    if (*evaluate_cmd) return cmd_evaluate(eval_flags, eval_backend, out);
    if (*show) return cmd_rulebank_show(bank_file, max_rules, out);
    if (*replay) return cmd_replay(replay_run, replay_fixtures, replay_keep, out);
    if (*report) return cmd_report(report_files, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const StateError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "aborted: " << e.what() << '\n';
    return kRuntimeAbort;
  }
  return kUsage;
}

}  // namespace promptreg::cli
