#include "promptreg/eval_harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "promptreg/errors.hpp"
#include "promptreg/llm_gateway.hpp"
#include "promptreg/structured_output.hpp"

namespace promptreg {
namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

bool is_trailing_punct(char c) {
  return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?';
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : trim(s)) {
    if (std::isspace(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space && !out.empty()) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(c));
  }
  return out;
}

const std::regex& numeral_pattern() {
  static const std::regex re(R"(^([+-]?)(\d{1,3}(?:,\d{3})+|\d+)(?:\.(\d+))?$)");
  return re;
}

std::string canonical_numeral(const std::string& s) {
  std::smatch m;
  if (!std::regex_match(s, m, numeral_pattern())) return s;
  std::string whole;
  for (char c : m[2].str()) {
    if (c != ',') whole.push_back(c);
  }
  const auto first = whole.find_first_not_of('0');
  whole = first == std::string::npos ? "0" : whole.substr(first);
  std::string frac = m[3].str();
  while (!frac.empty() && frac.back() == '0') frac.pop_back();
  std::string out = whole;
  if (!frac.empty()) out += "." + frac;
  if (m[1].str() == "-" && out != "0") out = "-" + out;
  return out;
}

std::string normalize_once(std::string_view text) {
  std::string s = collapse_whitespace(text);
  while (!s.empty() && is_trailing_punct(s.back())) s.pop_back();
  s = collapse_whitespace(s);
  return canonical_numeral(s);
}

std::string last_number(std::string_view text) {
  static const std::regex re(R"([+-]?\d[\d,]*(?:\.\d+)?)");
  std::string last;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) {
    last = it->str();
  }
  while (!last.empty() && last.back() == ',') last.pop_back();
  return last;
}

std::string after_last_marker(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  constexpr std::string_view marker = "answer:";
  const auto pos = lower.rfind(marker);
  if (pos == std::string::npos) return {};
  std::string_view rest = text.substr(pos + marker.size());
  // first nonempty line after the marker
  while (!rest.empty()) {
    const auto nl = rest.find('\n');
    const auto line = trim(rest.substr(0, nl));
    if (!line.empty()) return std::string(line);
    if (nl == std::string_view::npos) break;
    rest.remove_prefix(nl + 1);
  }
  return {};
}

}  // namespace

std::vector<Sample> parse_dataset(std::string_view text) {
  std::vector<Sample> samples;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!trim(line).empty()) {
      const std::string prefix = "line " + std::to_string(line_no) + ": ";
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) throw ConfigError(prefix + "not a JSON object");
      Sample s;
      for (const char* field : {"question", "answer"}) {
        const auto it = j.find(field);
        if (it == j.end()) throw ConfigError(prefix + "missing field " + field);
        std::string value;
        if (it->is_string()) {
          value = it->get<std::string>();
        } else if (it->is_number()) {
          value = it->dump();
        } else {
          throw ConfigError(prefix + "field " + field + " must be a string");
        }
        if (trim(value).empty()) throw ConfigError(prefix + "empty field " + field);
        (std::string_view(field) == "question" ? s.question : s.answer) = std::move(value);
      }
      samples.push_back(std::move(s));
    }
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  if (samples.empty()) throw ConfigError("dataset is empty");
  return samples;
}

std::vector<Sample> load_dataset(const std::filesystem::path& path) {
  try {
    return parse_dataset(read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

ExtractionRule parse_extraction_rule(std::string_view name) {
  if (name == "marker" || name == "marker_then_number") return ExtractionRule::MarkerThenNumber;
  if (name == "last_number") return ExtractionRule::LastNumber;
  if (name == "full") return ExtractionRule::FullOutput;
  throw ConfigError("unknown extraction rule " + std::string(name));
}

std::string_view to_string(ExtractionRule rule) noexcept {
  switch (rule) {
    case ExtractionRule::MarkerThenNumber: return "marker";
    case ExtractionRule::LastNumber: return "last_number";
    case ExtractionRule::FullOutput: return "full";
  }
  return "marker";
}

std::string normalize_answer(std::string_view text) {
  std::string current(text);
  for (;;) {
    std::string next = normalize_once(current);
    if (next == current) return next;
    current = std::move(next);
  }
}

std::string extract_answer(std::string_view raw_output, ExtractionRule rule) {
  std::string picked;
  if (rule == ExtractionRule::MarkerThenNumber) picked = after_last_marker(raw_output);
  if (picked.empty() && rule != ExtractionRule::FullOutput) picked = last_number(raw_output);
  if (picked.empty()) picked = std::string(trim(raw_output));
  return normalize_answer(picked);
}

bool exact_match(std::string_view extracted, std::string_view gold) {
  return normalize_answer(extracted) == normalize_answer(gold);
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["dataset"] = dataset;
  j["engine"] = engine;
  j["prompt_version"] = prompt_version;
  j["accuracy"] = accuracy;
  j["per_sample"] = nlohmann::ordered_json::array();
  for (const auto& r : per_sample) {
    j["per_sample"].push_back({{"correct", r.correct}, {"extracted", r.extracted}, {"raw_output", r.raw_output}});
  }
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.dataset = j.at("dataset").get<std::string>();
    r.engine = j.at("engine").get<std::string>();
    r.prompt_version = j.at("prompt_version").get<int>();
    r.accuracy = j.at("accuracy").get<double>();
    for (const auto& s : j.at("per_sample")) {
      r.per_sample.push_back({s.at("correct").get<bool>(), s.at("extracted").get<std::string>(),
                              s.at("raw_output").get<std::string>()});
    }
  } catch (const std::exception& e) {
    throw ConfigError(std::string("malformed eval report: ") + e.what());
  }
  return r;
}

void EvalReport::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << to_json().dump(2, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  if (!out) throw Error("cannot write report " + path.string());
}

EvalReport EvalReport::load(const std::filesystem::path& path) {
  const auto j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError("malformed eval report: " + path.string());
  return from_json(j);
}

void parallel_for(std::size_t n, std::size_t cap, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(cap, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          if (failed.load()) return;
          const std::size_t i = next.fetch_add(1);
          if (i >= n) return;
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
            failed.store(true);
            return;
          }
        }
      });
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

EvalReport evaluate(const PromptVersion& prompt, std::span<const Sample> dataset, Gateway& gateway,
                    const EvalOptions& options) {
  if (dataset.empty()) throw ConfigError("cannot evaluate an empty dataset");
  EvalReport report;
  report.dataset = options.dataset_name;
  report.engine = gateway.engines().forward.name;
  report.prompt_version = prompt.version;
  report.per_sample.resize(dataset.size());
  parallel_for(dataset.size(), options.concurrency_cap, [&](std::size_t i) {
    ChatRequest request{Role::Forward, prompt.text, dataset[i].question, options.step};
    SampleResult result;
    result.raw_output = gateway.complete(request);
    result.extracted = extract_answer(result.raw_output, options.extraction);
    result.correct = exact_match(result.extracted, dataset[i].answer);
    report.per_sample[i] = std::move(result);
  });
  const auto correct = std::count_if(report.per_sample.begin(), report.per_sample.end(),
                                     [](const SampleResult& r) { return r.correct; });
  report.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
  return report;
}

double generalization_gap(const EvalReport& ood, const EvalReport& train) {
  if (ood.prompt_version != train.prompt_version) {
    throw ConfigError("reports come from different prompt versions (" + std::to_string(ood.prompt_version) +
                      " vs " + std::to_string(train.prompt_version) + ")");
  }
  return train.accuracy - ood.accuracy;
}

std::string render_report_table(std::span<const EvalReport> reports) {
  std::vector<std::string> engines;
  std::vector<std::string> datasets;
  std::map<std::pair<std::string, std::string>, double> cells;
  for (const auto& r : reports) {
    if (std::find(engines.begin(), engines.end(), r.engine) == engines.end()) engines.push_back(r.engine);
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);
    cells[{r.engine, r.dataset}] = r.accuracy;
  }
  std::size_t engine_width = std::string_view("Engine").size();
  for (const auto& e : engines) engine_width = std::max(engine_width, e.size());
  std::vector<std::size_t> widths;
  for (const auto& d : datasets) widths.push_back(std::max<std::size_t>(d.size(), 5));

  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(engine_width)) << "Engine";
  for (std::size_t c = 0; c < datasets.size(); ++c) {
    out << " | " << std::right << std::setw(static_cast<int>(widths[c])) << datasets[c];
  }
  out << '\n' << std::string(engine_width, '-');
  for (const auto w : widths) out << "-+-" << std::string(w, '-');
  out << '\n';
  for (const auto& e : engines) {
    out << std::left << std::setw(static_cast<int>(engine_width)) << e;
    for (std::size_t c = 0; c < datasets.size(); ++c) {
      out << " | " << std::right << std::setw(static_cast<int>(widths[c]));
      const auto it = cells.find({e, datasets[c]});
      if (it == cells.end()) {
        out << "-";
      } else {
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(1) << it->second * 100.0;
        out << cell.str();
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace promptreg
