#pragma once

// Cross-step memory of canonical generalized rules with recurrence counts.
// Entries are only ever inserted or incremented by one; the total mention
// mass therefore grows by exactly one per applied operation.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace promptreg {

struct Rule {
  std::string id;
  std::string canonical_description;
  int mention_count = 1;

  bool operator==(const Rule&) const = default;
};

struct RuleBankOp {
  enum class Kind { Increment, Insert };
  Kind kind = Kind::Insert;
  std::string rule_id;                // Increment only
  std::string canonical_description;  // Insert only

  static RuleBankOp increment(std::string id) { return {Kind::Increment, std::move(id), {}}; }
  static RuleBankOp insert(std::string description) { return {Kind::Insert, {}, std::move(description)}; }

  bool operator==(const RuleBankOp&) const = default;
};

inline constexpr std::size_t kDefaultSummaryRules = 20;

class RuleBank {
 public:
  RuleBank() = default;
  explicit RuleBank(int created_step) : created_step_(created_step), updated_step_(created_step) {}

  const std::vector<Rule>& entries() const noexcept { return entries_; }
  int created_step() const noexcept { return created_step_; }
  int updated_step() const noexcept { return updated_step_; }

  const Rule* find(std::string_view id) const noexcept;
  long long total_mentions() const noexcept;
  bool empty() const noexcept { return entries_.empty(); }

  /// Id the next INSERT will receive ("R" + insertion ordinal).
  std::string next_id() const;

  /// True when every INCREMENT references an existing entry and every INSERT
  /// has a nonempty description.
  bool valid(const RuleBankOp& op) const noexcept;

  /// Applies validated ops in order. Returns the ids touched, one per op.
  /// Throws Error on an op that fails valid().
  std::vector<std::string> apply(std::span<const RuleBankOp> ops, int step);

  /// "- [id] description (mention_count=m)" lines, highest count first, ties
  /// in insertion order, at most max_rules lines. "(empty)" for an empty bank.
  std::string summarize(std::size_t max_rules = kDefaultSummaryRules) const;

  void persist(const std::filesystem::path& path) const;
  /// Throws StateError("rulebank unreadable: ...") on any defect.
  static RuleBank load(const std::filesystem::path& path);

  std::string to_json_text() const;
  static RuleBank from_json_text(std::string_view text);

  bool operator==(const RuleBank&) const = default;

 private:
  std::vector<Rule> entries_;
  int created_step_ = 0;
  int updated_step_ = 0;
};

/// psi: any nondecreasing map from mention count to a scope estimate.
using ScopeProxy = std::function<double(int mention_count)>;

/// psi = identity.
double identity_scope_proxy(int mention_count) noexcept;

double scope_proxy(const Rule& rule, const ScopeProxy& psi = identity_scope_proxy);

}  // namespace promptreg
