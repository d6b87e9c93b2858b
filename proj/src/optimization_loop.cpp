#include "promptreg/optimization_loop.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "promptreg/errors.hpp"

namespace promptreg {
namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Absolute tolerance on the gate comparison so that accuracies computed as
// k/n compare the way their decimal values read.
constexpr double kGateTolerance = 1e-12;

// Request step tag of the p_0 validation pass, distinct from every loop step.
constexpr int kInitStepTag = -1;

ordered_json version_json(const PromptVersion& p) {
  ordered_json j;
  j["version"] = p.version;
  j["token_count"] = p.token_count;
  j["text"] = p.text;
  return j;
}

PromptVersion version_from_json(const json& j) {
  PromptVersion p;
  p.text = j.at("text").get<std::string>();
  p.version = j.at("version").get<int>();
  p.token_count = j.at("token_count").get<std::size_t>();
  return p;
}

ordered_json channels_json(ChannelSet set) {
  ordered_json out = ordered_json::array();
  if (set.contains(Channel::Capacity)) out.push_back(to_string(Channel::Capacity));
  if (set.contains(Channel::Scope)) out.push_back(to_string(Channel::Scope));
  return out;
}

ordered_json calls_json(const std::array<std::size_t, 4>& counts) {
  ordered_json j;
  for (Role r : kAllRoles) j[std::string(to_string(r))] = counts[static_cast<std::size_t>(r)];
  return j;
}

std::array<std::size_t, 4> snapshot_calls(const Gateway& g) {
  std::array<std::size_t, 4> out{};
  for (Role r : kAllRoles) out[static_cast<std::size_t>(r)] = g.calls(r);
  return out;
}

std::array<std::size_t, 4> minus(const std::array<std::size_t, 4>& a, const std::array<std::size_t, 4>& b) {
  std::array<std::size_t, 4> out{};
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

// Uniform integer in [0, bound) by rejection; std distributions are not
// portable across standard libraries and the batches must be.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  for (;;) {
    const std::uint64_t x = rng();
    if (x < limit) return x % bound;
  }
}

void write_atomic(const fs::path& path, std::string_view content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error("cannot append to " + path.string());
  out << line << '\n';
  out.flush();
}

std::string dump_line(const ordered_json& j) {
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> lines;
  std::ifstream in(path, std::ios::binary);
  if (!in) return lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

void truncate_lines(const fs::path& path, std::size_t keep) {
  auto lines = read_lines(path);
  if (lines.size() < keep) {
    throw StateError("run state corrupt: " + path.filename().string() + " has " + std::to_string(lines.size()) +
                     " lines, state expects " + std::to_string(keep));
  }
  lines.resize(keep);
  std::string content;
  for (const auto& l : lines) content += l + '\n';
  write_atomic(path, content);
}

std::string absolute_string(const fs::path& p) {
  if (p.empty()) return {};
  return fs::absolute(p).lexically_normal().string();
}

ordered_json engines_json(const RoleAssignment& engines) {
  ordered_json j;
  for (Role r : kAllRoles) {
    json e = engines.for_role(r);
    j[std::string(to_string(r))] = ordered_json::parse(e.dump());
  }
  return j;
}

std::string first_difference(const json& a, const json& b) {
  if (a.is_object() && b.is_object()) {
    for (const auto& [k, v] : a.items()) {
      if (!b.contains(k)) return k;
      if (v != b.at(k)) {
        const auto inner = first_difference(v, b.at(k));
        return inner.empty() ? k : k + "." + inner;
      }
    }
    for (const auto& [k, v] : b.items()) {
      if (!a.contains(k)) return k;
    }
  }
  return {};
}

}  // namespace

namespace run_files {
std::string prompt_file(int version) { return "prompt_v" + std::to_string(version) + ".txt"; }
}  // namespace run_files

void RunConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (iterations < 1) throw ConfigError("iterations must be at least 1");
  if (!(tau_c > -1.0)) throw ConfigError("tau_c must exceed -1");
  if (!(acceptance_relaxation >= 0.0 && acceptance_relaxation <= 1.0)) {
    throw ConfigError("acceptance_relaxation must lie in [0, 1]");
  }
  if (concurrency < 1) throw ConfigError("concurrency must be at least 1");
  if (tags.start.empty() || tags.end.empty() || tags.start == tags.end) {
    throw ConfigError("tags must be two distinct nonempty strings");
  }
  if (role_desc.empty()) throw ConfigError("role_desc must be nonempty");
  if (count_whitespace_tokens(initial_prompt) == 0) throw ConfigError("initial_prompt must be nonempty");
  if (train_path.empty()) throw ConfigError("train path is required");
  if (val_path.empty()) throw ConfigError("val path is required");
  if (run_dir.empty()) throw ConfigError("run directory is required");
}

ordered_json RunConfig::to_json() const {
  ordered_json j;
  j["batch_size"] = batch_size;
  j["iterations"] = iterations;
  j["tau_c"] = tau_c;
  j["acceptance_relaxation"] = acceptance_relaxation;
  j["seed"] = seed;
  j["engines"] = engines_json(engines);
  j["tags"] = {{"start", tags.start}, {"end", tags.end}};
  j["role_desc"] = role_desc;
  j["initial_prompt"] = initial_prompt;
  j["train_path"] = absolute_string(train_path);
  j["val_path"] = absolute_string(val_path);
  j["run_dir"] = absolute_string(run_dir);
  j["val_limit"] = val_limit;
  j["concurrency"] = concurrency;
  j["extraction"] = to_string(extraction);
  j["rule_scope"] = rule_scope;
  j["rule_patterns"] = rule_patterns;
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  try {
    c.batch_size = j.at("batch_size").get<int>();
    c.iterations = j.at("iterations").get<int>();
    c.tau_c = j.at("tau_c").get<double>();
    c.acceptance_relaxation = j.at("acceptance_relaxation").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    for (Role r : kAllRoles) c.engines.for_role(r) = j.at("engines").at(std::string(to_string(r))).get<EngineConfig>();
    c.tags.start = j.at("tags").at("start").get<std::string>();
    c.tags.end = j.at("tags").at("end").get<std::string>();
    c.role_desc = j.at("role_desc").get<std::string>();
    c.initial_prompt = j.at("initial_prompt").get<std::string>();
    c.train_path = j.at("train_path").get<std::string>();
    c.val_path = j.at("val_path").get<std::string>();
    c.run_dir = j.at("run_dir").get<std::string>();
    c.val_limit = j.at("val_limit").get<std::size_t>();
    c.concurrency = j.at("concurrency").get<std::size_t>();
    c.extraction = parse_extraction_rule(j.at("extraction").get<std::string>());
    c.rule_scope = j.at("rule_scope").get<std::string>();
    c.rule_patterns = j.at("rule_patterns").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config unreadable: ") + e.what());
  }
  return c;
}

ordered_json RunState::to_json() const {
  ordered_json j;
  j["next_step"] = next_step;
  j["initial"] = version_json(initial);
  j["current"] = version_json(current);
  j["best"] = version_json(best);
  j["current_val"] = current_val;
  j["best_val"] = best_val;
  j["bank"] = ordered_json::parse(bank.to_json_text());
  if (last_transition) {
    j["last_transition"] = {version_json(last_transition->first), version_json(last_transition->second)};
  } else {
    j["last_transition"] = nullptr;
  }
  ordered_json contexts = ordered_json::array();
  for (const auto& c : contexts_of_last_step) {
    contexts.push_back({{"input", c.sample_input},
                        {"output", c.model_output},
                        {"expected", c.expected},
                        {"correct", c.correct}});
  }
  j["contexts_of_last_step"] = std::move(contexts);
  j["trace_lines"] = trace_lines;
  j["metrics_lines"] = metrics_lines;
  return j;
}

RunState RunState::from_json(const json& j) {
  RunState s;
  try {
    s.next_step = j.at("next_step").get<int>();
    s.initial = version_from_json(j.at("initial"));
    s.current = version_from_json(j.at("current"));
    s.best = version_from_json(j.at("best"));
    s.current_val = j.at("current_val").get<double>();
    s.best_val = j.at("best_val").get<double>();
    s.bank = RuleBank::from_json_text(j.at("bank").dump());
    const auto& t = j.at("last_transition");
    if (!t.is_null()) s.last_transition = Transition{version_from_json(t.at(0)), version_from_json(t.at(1))};
    for (const auto& c : j.at("contexts_of_last_step")) {
      s.contexts_of_last_step.push_back({c.at("input").get<std::string>(), c.at("output").get<std::string>(),
                                         c.at("expected").get<std::string>(), c.at("correct").get<bool>()});
    }
    s.trace_lines = j.at("trace_lines").get<std::size_t>();
    s.metrics_lines = j.at("metrics_lines").get<std::size_t>();
  } catch (const json::exception& e) {
    throw StateError(std::string("run state corrupt: ") + e.what());
  } catch (const StateError& e) {
    throw StateError(std::string("run state corrupt: ") + e.what());
  }
  if (s.next_step < 0 || s.current.version < 0) throw StateError("run state corrupt: negative step or version");
  return s;
}

std::vector<std::size_t> next_batch_indices(std::size_t n, int step, int batch_size, std::uint64_t seed) {
  if (n == 0) throw DomainError("next_batch needs a nonempty dataset");
  if (batch_size < 1 || step < 0) throw DomainError("next_batch needs batch_size >= 1 and step >= 0");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto jdx = static_cast<std::size_t>(bounded(rng, i + 1));
    std::swap(perm[i], perm[jdx]);
  }
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  const std::size_t start = static_cast<std::size_t>(step) * static_cast<std::size_t>(batch_size);
  for (std::size_t i = 0; i < static_cast<std::size_t>(batch_size); ++i) out.push_back(perm[(start + i) % n]);
  return out;
}

std::vector<Sample> next_batch(std::span<const Sample> train, int step, int batch_size, std::uint64_t seed) {
  std::vector<Sample> out;
  for (std::size_t i : next_batch_indices(train.size(), step, batch_size, seed)) out.push_back(train[i]);
  return out;
}

bool validation_gate(double candidate_val, double current_val, double relaxation) noexcept {
  return candidate_val >= current_val - relaxation - kGateTolerance;
}

Datasets load_datasets(const RunConfig& config) {
  Datasets d;
  d.train = load_dataset(config.train_path);
  d.val = load_dataset(config.val_path);
  if (config.val_limit > 0 && d.val.size() > config.val_limit) d.val.resize(config.val_limit);
  return d;
}

namespace {

EvalOptions eval_options(const RunConfig& config, std::string name, int step) {
  EvalOptions o;
  o.dataset_name = std::move(name);
  o.concurrency_cap = config.concurrency;
  o.step = step;
  o.extraction = config.extraction;
  return o;
}

}  // namespace

RunState initial_state(const RunConfig& config, const Datasets& data, Gateway& gateway, ordered_json* init_record) {
  RunState s;
  s.initial = PromptVersion::make(config.initial_prompt, 0);
  s.current = s.initial;
  s.best = s.initial;
  const auto before = snapshot_calls(gateway);
  const EvalReport report = evaluate(s.current, data.val, gateway, eval_options(config, "val", kInitStepTag));
  s.current_val = report.accuracy;
  s.best_val = report.accuracy;
  if (init_record) {
    ordered_json j;
    j["event"] = "init";
    j["version"] = s.current.version;
    j["tokens"] = s.current.token_count;
    j["val_acc"] = s.current_val;
    j["train_size"] = data.train.size();
    j["val_size"] = data.val.size();
    j["calls"] = calls_json(minus(snapshot_calls(gateway), before));
    *init_record = std::move(j);
  }
  return s;
}

StepOutcome run_step(RunState& state, const RunConfig& config, const Datasets& data, Gateway& gateway) {
  RunState next = state;
  const int t = next.next_step;
  std::vector<std::string> warnings;
  std::vector<std::string> events;
  StageContext ctx{gateway, t, [&warnings](const std::string& w) { warnings.push_back(w); }};
  const auto calls_before = snapshot_calls(gateway);

  ordered_json trace;
  trace["step"] = t;
  trace["version_in"] = next.current.version;

  // Stage 2 on the last accepted transition.
  std::optional<RegGradient> reg;
  std::optional<ChannelDiagnostics> diag_out;
  if (!next.last_transition) {
    events.emplace_back("SER skipped: no prior transition");
    trace["ser"] = nullptr;
  } else {
    const auto& [prev, curr] = *next.last_transition;
    ordered_json ser;
    ser["transition"] = {prev.version, curr.version};
    try {
      SemanticDiff diff;
      const bool identity = prev.version == curr.version;
      if (!identity) {
        diff = semantic_diff({prev, curr, next.initial, next.bank, next.contexts_of_last_step}, ctx);
      } else {
        events.emplace_back("SER identity transition: no update since last step");
      }
      const ChannelDiagnostics diag = diagnose(prev, curr, diff, config.tau_c);
      diag_out = diag;
      ser["rho_c"] = diag.rho_c;
      ser["b_c"] = diag.b_c;
      ser["b_w"] = diag.b_w;
      ser["sgn_delta_w"] = to_string(diag.sgn_delta_w);
      ser["active"] = channels_json(diag.active);
      ser["mode"] = to_string(regularization_mode(diag.active));
      ordered_json changes = ordered_json::array();
      for (const auto& c : diff.rules_changed) changes.push_back({{"type", to_string(c.kind)}, {"description", c.description}});
      ser["rules_changed"] = std::move(changes);
      reg = synthesize_reg_gradient(diag, diff, curr, ctx);
    } catch (const Error& e) {
      warnings.push_back(std::string("regularization unavailable: ") + e.what());
      reg.reset();
    }
    ser["reg_gradient"] = reg ? ordered_json(reg->guidance) : ordered_json(nullptr);
    trace["ser"] = std::move(ser);
  }

  // Stage 1 on this step's batch.
  const auto indices = next_batch_indices(data.train.size(), t, config.batch_size, config.seed);
  std::vector<Sample> batch;
  for (std::size_t i : indices) batch.push_back(data.train[i]);
  auto contexts = forward_eval(next.current, batch, ctx, eval_options(config, "train", t));
  const double batch_acc = batch_accuracy(contexts);
  trace["batch"] = indices;
  trace["batch_acc"] = batch_acc;

  const RawGradient raw = generate_raw_gradient(next.current, contexts, ctx);
  const auto purified = purify(raw, next.bank, next.current, ctx);
  trace["purified"] = purified ? ordered_json(purified->text()) : ordered_json(nullptr);
  ordered_json bank_ops = ordered_json::array();
  std::vector<PurifiedGradient> accepted_gradients;
  if (purified) {
    CanonicalizeOptions copts;
    copts.rule_scope = config.rule_scope;
    copts.rule_patterns = config.rule_patterns;
    const auto ops = canonicalize_and_match(*purified, next.bank, ctx, copts);
    const auto ids = next.bank.apply(ops, t);
    for (std::size_t i = 0; i < ops.size(); ++i) {
      bank_ops.push_back({{"op", ops[i].kind == RuleBankOp::Kind::Insert ? "INSERT" : "INCREMENT"}, {"id", ids[i]}});
    }
    accepted_gradients.push_back(*purified);
  } else {
    events.emplace_back("gradient rejected by purifier");
  }
  trace["bank_ops"] = std::move(bank_ops);
  trace["bank"] = {{"rules", next.bank.entries().size()}, {"mentions", next.bank.total_mentions()}};

  // Stage 3 and the validation gate.
  const auto task_gradient = assemble_task_gradient(accepted_gradients);
  std::optional<PromptVersion> accepted;
  ordered_json gate = nullptr;
  ordered_json candidate_json = nullptr;
  bool no_update = false;
  if (!noop_guard(task_gradient)) {
    events.emplace_back("update skipped: empty task gradient");
    no_update = true;
  } else {
    std::optional<PromptVersion> candidate;
    try {
      candidate = apply_update(next.current, *task_gradient, reg, ctx, config.role_desc, config.tags);
    } catch (const UpdateExtractionFailed& e) {
      events.emplace_back(std::string("update skipped: ") + e.what());
      no_update = true;
    }
    if (candidate) {
      candidate_json = {{"version", candidate->version},
                        {"tokens", candidate->token_count},
                        {"regularized", reg.has_value()}};
      const EvalReport report = evaluate(*candidate, data.val, gateway, eval_options(config, "val", t));
      const bool ok = validation_gate(report.accuracy, next.current_val, config.acceptance_relaxation);
      gate = {{"current_val", next.current_val},
              {"candidate_val", report.accuracy},
              {"relaxation", config.acceptance_relaxation},
              {"accepted", ok}};
      if (ok) {
        events.emplace_back("candidate accepted");
        next.last_transition = Transition{next.current, *candidate};
        next.contexts_of_last_step = contexts;
        next.current = *candidate;
        next.current_val = report.accuracy;
        if (report.accuracy > next.best_val) {
          next.best = *candidate;
          next.best_val = report.accuracy;
        }
        accepted = *candidate;
      } else {
        events.emplace_back("candidate rejected: validation accuracy dropped");
      }
    }
  }
  if (no_update && next.last_transition) {
    next.last_transition = Transition{next.current, next.current};
    next.contexts_of_last_step = contexts;
  }
  trace["candidate"] = std::move(candidate_json);
  trace["gate"] = std::move(gate);
  trace["version_out"] = next.current.version;
  trace["best"] = {{"version", next.best.version}, {"val", next.best_val}};

  const auto calls = minus(snapshot_calls(gateway), calls_before);
  trace["calls"] = calls_json(calls);
  trace["backward_calls"] = calls[static_cast<std::size_t>(Role::Gradient)] +
                            calls[static_cast<std::size_t>(Role::Regularization)] +
                            calls[static_cast<std::size_t>(Role::Optimizer)];
  trace["events"] = events;
  trace["warnings"] = warnings;

  ordered_json metrics;
  metrics["step"] = t;
  metrics["train_batch_acc"] = batch_acc;
  metrics["val_acc"] = gate.is_null() ? ordered_json(nullptr) : gate["candidate_val"];
  metrics["current_val"] = next.current_val;
  metrics["rho_c"] = diag_out ? ordered_json(diag_out->rho_c) : ordered_json(nullptr);
  metrics["active"] = diag_out ? channels_json(diag_out->active) : ordered_json::array();
  metrics["accepted"] = accepted.has_value();
  metrics["version"] = next.current.version;
  metrics["tokens"] = next.current.token_count;

  next.next_step = t + 1;
  state = std::move(next);
  return {std::move(trace), std::move(metrics), std::move(accepted)};
}

RunResult run(const RunConfig& config, std::shared_ptr<Backend> backend, const RunOptions& options) {
  config.validate();
  const fs::path dir = config.run_dir;
  const fs::path state_path = dir / run_files::kState;
  const fs::path snapshot_path = dir / run_files::kConfigSnapshot;
  const fs::path trace_path = dir / run_files::kTrace;
  const fs::path metrics_path = dir / run_files::kMetrics;
  const Datasets data = load_datasets(config);

  Gateway gateway(std::move(backend), config.engines, GatewayOptions{static_cast<std::ptrdiff_t>(config.concurrency)});
  RunState state;

  if (options.resume) {
    if (!fs::exists(state_path)) throw StateError("nothing to resume: " + state_path.string() + " missing");
    json snapshot;
    try {
      std::ifstream in(snapshot_path, std::ios::binary);
      snapshot = json::parse(in);
    } catch (const json::exception& e) {
      throw StateError(std::string("config snapshot unreadable: ") + e.what());
    }
    const json wanted = json::parse(config.to_json().dump());
    if (snapshot != wanted) {
      throw ConfigError("config differs from the run's snapshot at " + first_difference(wanted, snapshot));
    }
    json state_json;
    try {
      std::ifstream in(state_path, std::ios::binary);
      state_json = json::parse(in);
    } catch (const json::exception& e) {
      throw StateError(std::string("run state corrupt: ") + e.what());
    }
    state = RunState::from_json(state_json);
    truncate_lines(trace_path, state.trace_lines);
    truncate_lines(metrics_path, state.metrics_lines);
    gateway.record_to(dir / run_files::kTranscript);
  } else {
    if (fs::exists(state_path)) {
      throw ConfigError("run directory " + dir.string() + " already holds a run; resume it or choose another");
    }
    fs::create_directories(dir);
    for (auto name : {run_files::kTrace, run_files::kMetrics, run_files::kTranscript}) fs::remove(dir / name);
    write_atomic(snapshot_path, config.to_json().dump(2) + "\n");
    gateway.record_to(dir / run_files::kTranscript);
    ordered_json init;
    state = initial_state(config, data, gateway, &init);
    write_atomic(dir / run_files::prompt_file(0), state.current.text);
    state.bank.persist(dir / run_files::kRuleBank);
    append_line(trace_path, dump_line(init));
    state.trace_lines = 1;
    write_atomic(state_path, state.to_json().dump(2) + "\n");
  }

  int completed = 0;
  while (state.next_step < config.iterations &&
         !(options.halt_before_step && state.next_step >= *options.halt_before_step)) {
    StepOutcome outcome = run_step(state, config, data, gateway);
    if (outcome.accepted) write_atomic(dir / run_files::prompt_file(outcome.accepted->version), outcome.accepted->text);
    state.bank.persist(dir / run_files::kRuleBank);
    append_line(trace_path, dump_line(outcome.trace));
    append_line(metrics_path, dump_line(outcome.metrics));
    ++state.trace_lines;
    ++state.metrics_lines;
    write_atomic(state_path, state.to_json().dump(2) + "\n");
    ++completed;
  }

  write_atomic(dir / run_files::kOptimizedPrompt, state.current.text);
  write_atomic(dir / run_files::kBestPrompt, state.best.text);

  RunResult result;
  result.optimized = state.current;
  result.best = state.best;
  result.best_val = state.best_val;
  result.steps_completed = completed;
  result.finished = state.next_step >= config.iterations;
  return result;
}

}  // namespace promptreg
