#include "promptreg/rulebank.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "promptreg/errors.hpp"

namespace promptreg {

const Rule* RuleBank::find(std::string_view id) const noexcept {
  for (const auto& r : entries_) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

long long RuleBank::total_mentions() const noexcept {
  return std::accumulate(entries_.begin(), entries_.end(), 0LL,
                         [](long long acc, const Rule& r) { return acc + r.mention_count; });
}

std::string RuleBank::next_id() const { return "R" + std::to_string(entries_.size() + 1); }

bool RuleBank::valid(const RuleBankOp& op) const noexcept {
  if (op.kind == RuleBankOp::Kind::Increment) return find(op.rule_id) != nullptr;
  return !op.canonical_description.empty();
}

std::vector<std::string> RuleBank::apply(std::span<const RuleBankOp> ops, int step) {
  RuleBank next = *this;
  std::vector<std::string> touched;
  touched.reserve(ops.size());
  for (const auto& op : ops) {
    if (!next.valid(op)) {
      throw Error(op.kind == RuleBankOp::Kind::Increment ? "increment of unknown rule " + op.rule_id
                                                         : std::string("insert with empty description"));
    }
    if (op.kind == RuleBankOp::Kind::Increment) {
      auto it = std::find_if(next.entries_.begin(), next.entries_.end(),
                             [&](const Rule& r) { return r.id == op.rule_id; });
      ++it->mention_count;
      touched.push_back(it->id);
    } else {
      next.entries_.push_back(Rule{next.next_id(), op.canonical_description, 1});
      touched.push_back(next.entries_.back().id);
    }
  }
  next.updated_step_ = step;
  *this = std::move(next);
  return touched;
}

std::string RuleBank::summarize(std::size_t max_rules) const {
  if (entries_.empty() || max_rules == 0) return "(empty)";
  std::vector<const Rule*> order;
  order.reserve(entries_.size());
  for (const auto& r : entries_) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(),
                   [](const Rule* a, const Rule* b) { return a->mention_count > b->mention_count; });
  if (order.size() > max_rules) order.resize(max_rules);
  std::string out;
  for (const Rule* r : order) {
    if (!out.empty()) out += '\n';
    out += "- [" + r->id + "] " + r->canonical_description +
           " (mention_count=" + std::to_string(r->mention_count) + ")";
  }
  return out;
}

std::string RuleBank::to_json_text() const {
  nlohmann::ordered_json j;
  j["created_step"] = created_step_;
  j["updated_step"] = updated_step_;
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& r : entries_) {
    j["entries"].push_back({{"id", r.id},
                            {"canonical_description", r.canonical_description},
                            {"mention_count", r.mention_count}});
  }
  return j.dump(2) + "\n";
}

RuleBank RuleBank::from_json_text(std::string_view text) {
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw StateError("rulebank unreadable: not a JSON object");
  RuleBank bank;
  try {
    bank.created_step_ = j.at("created_step").get<int>();
    bank.updated_step_ = j.at("updated_step").get<int>();
    std::set<std::string> ids;
    for (const auto& e : j.at("entries")) {
      Rule r{e.at("id").get<std::string>(), e.at("canonical_description").get<std::string>(),
             e.at("mention_count").get<int>()};
      if (r.mention_count < 1) throw StateError("rulebank unreadable: mention_count below 1 for " + r.id);
      if (r.id.empty() || !ids.insert(r.id).second) throw StateError("rulebank unreadable: duplicate or empty id");
      bank.entries_.push_back(std::move(r));
    }
  } catch (const StateError&) {
    throw;
  } catch (const std::exception& ex) {
    throw StateError(std::string("rulebank unreadable: ") + ex.what());
  }
  return bank;
}

void RuleBank::persist(const std::filesystem::path& path) const {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << to_json_text();
    if (!out) throw Error("cannot write rulebank " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

RuleBank RuleBank::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("rulebank unreadable: cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return from_json_text(buffer.str());
}

double identity_scope_proxy(int mention_count) noexcept { return static_cast<double>(mention_count); }

double scope_proxy(const Rule& rule, const ScopeProxy& psi) { return psi(rule.mention_count); }

}  // namespace promptreg
