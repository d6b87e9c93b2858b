#pragma once

#include <functional>
#include <string>

namespace promptreg {

class Gateway;

using WarningSink = std::function<void(const std::string&)>;

/// What every LLM-backed stage needs for one optimization step.
struct StageContext {
  Gateway& gateway;
  int step = 0;
  WarningSink warn = [](const std::string&) {};
};

}  // namespace promptreg
