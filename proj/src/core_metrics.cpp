#include "promptreg/core_metrics.hpp"

#include <cctype>
#include <cmath>

#include "promptreg/errors.hpp"

namespace promptreg {

std::size_t count_whitespace_tokens(std::string_view text) noexcept {
  std::size_t count = 0;
  bool in_token = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      in_token = false;
    } else if (!in_token) {
      in_token = true;
      ++count;
    }
  }
  return count;
}

const TokenCounter& default_token_counter() {
  static const TokenCounter counter = [](std::string_view text) {
    return count_whitespace_tokens(text);
  };
  return counter;
}

PromptVersion PromptVersion::make(std::string text, int version, const TokenCounter& counter) {
  PromptVersion p;
  p.token_count = counter(text);
  p.text = std::move(text);
  p.version = version;
  return p;
}

ScopeEstimate ScopeEstimate::from_mean_scope(double mean_scope) {
  if (!(mean_scope >= 0.0 && mean_scope <= 1.0)) {
    throw DomainError("mean scope must lie in [0, 1]");
  }
  return ScopeEstimate(mean_scope);
}

std::string_view to_string(Channel c) noexcept {
  return c == Channel::Capacity ? "CAPACITY" : "SCOPE";
}

std::string_view to_string(SpecificitySign s) noexcept {
  switch (s) {
    case SpecificitySign::Negative: return "-";
    case SpecificitySign::Zero: return "0";
    case SpecificitySign::Positive: return "+";
  }
  return "0";
}

double capacity_growth(std::size_t prev_tokens, std::size_t curr_tokens) {
  if (prev_tokens == 0) throw DomainError("degenerate transition");
  const double prev = static_cast<double>(prev_tokens);
  return (static_cast<double>(curr_tokens) - prev) / prev;
}

double capacity_growth(const PromptVersion& prev, const PromptVersion& curr) {
  return capacity_growth(prev.token_count, curr.token_count);
}

bool capacity_trigger(double rho_c, double tau_c) {
  if (!(tau_c > -1.0)) throw DomainError("tau_c must exceed -1");
  return rho_c > tau_c;
}

double threshold_from_log(double theta) { return std::expm1(theta); }

double inefficiency(std::size_t capacity, const ScopeEstimate& scope) {
  return static_cast<double>(capacity) * scope.narrowness();
}

std::pair<double, double> log_decomposition(double prev_capacity, double prev_narrowness,
                                            double curr_capacity, double curr_narrowness) {
  if (!(prev_capacity > 0.0 && prev_narrowness > 0.0 && curr_capacity > 0.0 &&
        curr_narrowness > 0.0)) {
    throw DomainError("log-decomposition undefined");
  }
  return {std::log(curr_capacity / prev_capacity), std::log(curr_narrowness / prev_narrowness)};
}

ChannelSet active_channels(bool b_c, bool b_w) noexcept { return ChannelSet(b_c, b_w); }

}  // namespace promptreg
