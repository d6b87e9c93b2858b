#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "oracles.hpp"
#include "promptreg/errors.hpp"
#include "promptreg/optimization_loop.hpp"

using namespace promptreg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kGolden = fs::path(PROMPTREG_TEST_DATA) / "golden";

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli_run(std::vector<std::string> args) {
  args.insert(args.begin(), "promptreg");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> golden_optimize(const fs::path& out_dir) {
  return {"optimize",      "--train",
          (kGolden / "train.jsonl").string(), "--val",
          (kGolden / "val.jsonl").string(),   "--out",
          out_dir.string(),                   "--seed",
          "7",                                "--backend",
          "scripted",                         "--fixtures",
          (kGolden / "fixtures.jsonl").string(), "--initial-prompt-file",
          (kGolden / "initial_prompt.txt").string()};
}

void write(const fs::path& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

// A two-question dataset and fixtures answering both correctly.
struct EvalFiles {
  oracle::TempDir dir{"cli-eval"};
  fs::path prompt = dir.path() / "prompt.txt";
  fs::path dataset = dir.path() / "d.jsonl";
  fs::path fixtures = dir.path() / "fixtures.jsonl";

  EvalFiles() {
    write(prompt, "Solve it.");
    write(dataset, "{\"question\": \"first q\", \"answer\": \"3\"}\n{\"question\": \"second q\", \"answer\": \"5\"}\n");
    write(fixtures,
          "{\"role\": \"FORWARD\", \"match_substring\": \"first q\", \"response\": \"Answer: 3\"}\n"
          "{\"role\": \"FORWARD\", \"match_substring\": \"second q\", \"response\": \"Answer: 5.0\"}\n");
  }
  std::vector<std::string> args() const {
    return {"evaluate", "--prompt-file", prompt.string(), "--dataset", dataset.string(), "--backend", "scripted",
            "--fixtures", fixtures.string()};
  }
};

}  // namespace

TEST(Cli, OptimizeHappyPath) {
  oracle::TempDir dir("cli-opt");
  const auto inputs = {kGolden / "train.jsonl", kGolden / "val.jsonl", kGolden / "fixtures.jsonl",
                       kGolden / "initial_prompt.txt"};
  std::vector<std::string> before;
  for (const auto& p : inputs) before.push_back(oracle::read_file(p));

  const auto r = cli_run(golden_optimize(dir.path() / "run"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("steps_completed=12 finished=true"), std::string::npos);
  EXPECT_NE(r.out.find("optimized_version=7"), std::string::npos);
  EXPECT_NE(r.out.find("best_version=3 best_val=1.0000"), std::string::npos);
  EXPECT_EQ(oracle::read_file(dir.path() / "run" / "trace.jsonl"), oracle::read_file(kGolden / "trace.jsonl"));

  std::size_t i = 0;
  for (const auto& p : inputs) EXPECT_EQ(oracle::read_file(p), before[i++]) << p;

  // Rerunning into the same directory without --resume is refused.
  EXPECT_EQ(cli_run(golden_optimize(dir.path() / "run")).code, 2);
}

TEST(Cli, OptimizeHaltAndResume) {
  oracle::TempDir dir("cli-resume");
  auto args = golden_optimize(dir.path() / "run");
  auto halted = args;
  halted.insert(halted.end(), {"--halt-before-step", "4"});
  const auto first = cli_run(halted);
  ASSERT_EQ(first.code, 0) << first.err;
  EXPECT_NE(first.out.find("steps_completed=4 finished=false"), std::string::npos);
  args.push_back("--resume");
  const auto second = cli_run(args);
  ASSERT_EQ(second.code, 0) << second.err;
  EXPECT_EQ(oracle::read_file(dir.path() / "run" / "trace.jsonl"), oracle::read_file(kGolden / "trace.jsonl"));
}

TEST(Cli, InvalidConfigurationIsUsageError) {
  oracle::TempDir dir("cli-bad");
  auto args = golden_optimize(dir.path() / "run");
  args.insert(args.end(), {"--tau-c", "-2"});
  const auto r = cli_run(args);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("tau_c must exceed -1"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir.path() / "run" / "state.json"));

  auto zero = golden_optimize(dir.path() / "run");
  zero.insert(zero.end(), {"--iterations", "0"});
  EXPECT_EQ(cli_run(zero).code, 2);

  auto unknown = golden_optimize(dir.path() / "run");
  unknown.push_back("--no-such-flag");
  EXPECT_EQ(cli_run(unknown).code, 2);

  EXPECT_EQ(cli_run({"optimize", "--train", "x"}).code, 2);
  EXPECT_EQ(cli_run({"frobnicate"}).code, 2);
  EXPECT_EQ(cli_run({"--help"}).code, 0);

  auto bad_extraction = golden_optimize(dir.path() / "run");
  bad_extraction.insert(bad_extraction.end(), {"--extraction", "fuzzy"});
  EXPECT_EQ(cli_run(bad_extraction).code, 2);
}

TEST(Cli, BackendFailureIsRuntimeAbort) {
  oracle::TempDir dir("cli-abort");
  write(dir.path() / "empty.jsonl", "");
  auto args = golden_optimize(dir.path() / "run");
  args[args.size() - 3] = (dir.path() / "empty.jsonl").string();  // --fixtures value
  const auto r = cli_run(args);
  EXPECT_EQ(r.code, 1) << r.err;
  EXPECT_NE(r.err.find("fixture miss"), std::string::npos);
}

TEST(Cli, EvaluatePrintsAccuracy) {
  EvalFiles files;
  auto args = files.args();
  args.insert(args.end(), {"--report-out", (files.dir.path() / "report.json").string(), "--dataset-name", "tiny"});
  const auto r = cli_run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "accuracy=1.0000\n");
  const auto report = EvalReport::load(files.dir.path() / "report.json");
  EXPECT_EQ(report.dataset, "tiny");
  EXPECT_EQ(report.per_sample.size(), 2u);
}

TEST(Cli, EvaluateGap) {
  EvalFiles files;
  const auto train_report = files.dir.path() / "train.json";
  EvalReport train;
  train.dataset = "train";
  train.engine = "scripted";
  train.prompt_version = 0;
  train.accuracy = 1.0;
  train.save(train_report);
  write(files.fixtures,
        "{\"role\": \"FORWARD\", \"match_substring\": \"first q\", \"response\": \"Answer: 3\"}\n"
        "{\"role\": \"FORWARD\", \"match_substring\": \"second q\", \"response\": \"Answer: 4\"}\n");
  auto args = files.args();
  args.insert(args.end(), {"--gap", train_report.string()});
  const auto r = cli_run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "accuracy=0.5000\ngap=0.5000\n");
}

TEST(Cli, EvaluateMissingDataset) {
  EvalFiles files;
  auto args = files.args();
  args[4] = (files.dir.path() / "absent.jsonl").string();
  const auto r = cli_run(args);
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, RulebankShow) {
  oracle::TempDir dir("cli-bank");
  RuleBank{}.persist(dir.path() / "empty.json");
  auto r = cli_run({"rulebank", "show", (dir.path() / "empty.json").string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "(empty)\n");

  RuleBank bank;
  const std::vector<RuleBankOp> ops = {RuleBankOp::insert("a"), RuleBankOp::insert("b"), RuleBankOp::increment("R2")};
  bank.apply(ops, 0);
  bank.persist(dir.path() / "bank.json");
  r = cli_run({"rulebank", "show", (dir.path() / "bank.json").string(), "--max", "1"});
  EXPECT_EQ(r.out, "- [R2] b (mention_count=2)\n");

  write(dir.path() / "corrupt.json", "{\"entries\": [");
  r = cli_run({"rulebank", "show", (dir.path() / "corrupt.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("rulebank unreadable"), std::string::npos);
}

TEST(Cli, ReplayMatchesAndDetectsDivergence) {
  oracle::TempDir dir("cli-replay");
  const auto run_dir = dir.path() / "run";
  ASSERT_EQ(cli_run(golden_optimize(run_dir)).code, 0);
  const std::string trace_before = oracle::read_file(run_dir / "trace.jsonl");

  auto r = cli_run({"replay", run_dir.string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "0 divergences\n");
  r = cli_run({"replay", run_dir.string(), "--fixtures", (kGolden / "fixtures.jsonl").string()});
  EXPECT_EQ(r.out, "0 divergences\n");

  auto fixtures = load_fixtures(kGolden / "fixtures.jsonl");
  bool mutated = false;
  for (auto& f : fixtures) {
    if (f.role == Role::Gradient && f.step == 4 && f.match_substring == "Gradient Purifier") {
      f.response = R"({"purified_gradient": ""})";
      mutated = true;
    }
  }
  ASSERT_TRUE(mutated);
  save_fixtures(dir.path() / "mutated.jsonl", fixtures);
  r = cli_run({"replay", run_dir.string(), "--fixtures", (dir.path() / "mutated.jsonl").string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("divergence at step 4\n"), std::string::npos) << r.out;
  EXPECT_EQ(r.out.find("divergence at step 3\n"), std::string::npos) << r.out;
  EXPECT_EQ(r.out.find("0 divergences"), std::string::npos) << r.out;
  EXPECT_EQ(oracle::read_file(run_dir / "trace.jsonl"), trace_before);

  EXPECT_EQ(cli_run({"replay", (dir.path() / "nothing").string()}).code, 2);
}

TEST(Cli, ReportTable) {
  oracle::TempDir dir("cli-report");
  EvalReport a;
  a.dataset = "gsm8k";
  a.engine = "e1";
  a.accuracy = 0.8;
  a.save(dir.path() / "a.json");
  const auto r = cli_run({"report", (dir.path() / "a.json").string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "Engine | gsm8k\n-------+------\ne1     |  80.0\n");
}

TEST(Cli, EnginesFile) {
  const auto file = json::parse(R"({
    "engines": {
      "default": {"endpoint": "http://a/v1", "model_id": "small"},
      "big": {"endpoint": "http://b/v1", "model_id": "large", "temperature": 0.0}
    },
    "roles": {"optimizer": "big"}
  })");
  auto engines = cli::resolve_engines(file, {});
  EXPECT_EQ(engines.forward.name, "default");
  EXPECT_EQ(engines.forward.model_id, "small");
  EXPECT_EQ(engines.optimizer.name, "big");
  EXPECT_EQ(engines.optimizer.endpoint, "http://b/v1");

  cli::RoleOverrides overrides;
  overrides.gradient = "big";
  overrides.optimizer = "default";
  engines = cli::resolve_engines(file, overrides);
  EXPECT_EQ(engines.gradient.model_id, "large");
  EXPECT_EQ(engines.optimizer.model_id, "small");
  EXPECT_EQ(engines.regularization.model_id, "small");

  overrides.forward = "missing";
  EXPECT_THROW(cli::resolve_engines(file, overrides), ConfigError);
  EXPECT_THROW(cli::resolve_engines(json::parse(R"({"roles": {}})"), {}), ConfigError);

  oracle::TempDir dir("cli-engines");
  write(dir.path() / "engines.json", file.dump());
  EXPECT_EQ(cli::load_engines_file(dir.path() / "engines.json", {}).optimizer.model_id, "large");
  write(dir.path() / "broken.json", "{");
  EXPECT_THROW(cli::load_engines_file(dir.path() / "broken.json", {}), ConfigError);
}
