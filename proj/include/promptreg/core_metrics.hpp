#pragma once

// Representational-inefficiency arithmetic: capacity cost C(p) is the prompt's
// token length, scope narrowness W(p) = 1 - mean rule scope, and the measure
// is their product. Only ratios and sign tests of these quantities drive the
// optimizer, so any consistent token counter is acceptable.

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <utility>

namespace promptreg {

using TokenCounter = std::function<std::size_t(std::string_view)>;

/// Number of maximal runs of non-whitespace characters.
std::size_t count_whitespace_tokens(std::string_view text) noexcept;

/// The counter used when none is configured.
const TokenCounter& default_token_counter();

struct PromptVersion {
  std::string text;
  std::size_t token_count = 0;
  int version = 0;

  static PromptVersion make(std::string text, int version,
                            const TokenCounter& counter = default_token_counter());

  bool operator==(const PromptVersion&) const = default;
};

/// s-bar and W = 1 - s-bar. Only constructible from a mean scope in [0, 1].
class ScopeEstimate {
 public:
  static ScopeEstimate from_mean_scope(double mean_scope);

  double mean_scope() const noexcept { return mean_scope_; }
  double narrowness() const noexcept { return 1.0 - mean_scope_; }

 private:
  explicit ScopeEstimate(double s) : mean_scope_(s) {}
  double mean_scope_;
};

enum class Channel { Capacity, Scope };

/// Subset of {CAPACITY, SCOPE}.
class ChannelSet {
 public:
  constexpr ChannelSet() = default;
  constexpr ChannelSet(bool capacity, bool scope) : capacity_(capacity), scope_(scope) {}

  constexpr bool contains(Channel c) const noexcept {
    return c == Channel::Capacity ? capacity_ : scope_;
  }
  constexpr bool empty() const noexcept { return !capacity_ && !scope_; }
  constexpr bool operator==(const ChannelSet&) const = default;

 private:
  bool capacity_ = false;
  bool scope_ = false;
};

std::string_view to_string(Channel c) noexcept;

enum class SpecificitySign { Negative, Zero, Positive };

std::string_view to_string(SpecificitySign s) noexcept;

struct ChannelDiagnostics {
  double rho_c = 0.0;
  bool b_c = false;
  bool b_w = false;
  ChannelSet active;
  SpecificitySign sgn_delta_w = SpecificitySign::Zero;
};

/// rho_C = (C_t - C_{t-1}) / C_{t-1}. Throws DomainError("degenerate transition")
/// when the previous prompt has no tokens.
double capacity_growth(const PromptVersion& prev, const PromptVersion& curr);
double capacity_growth(std::size_t prev_tokens, std::size_t curr_tokens);

/// b_C = [rho_c > tau_c], strict.
bool capacity_trigger(double rho_c, double tau_c);

/// tau_C = e^theta - 1.
double threshold_from_log(double theta);

double inefficiency(std::size_t capacity, const ScopeEstimate& scope);

/// (ln(C_t / C_{t-1}), ln(W_t / W_{t-1})). Throws DomainError on nonpositive input.
std::pair<double, double> log_decomposition(double prev_capacity, double prev_narrowness,
                                            double curr_capacity, double curr_narrowness);

ChannelSet active_channels(bool b_c, bool b_w) noexcept;

}  // namespace promptreg
