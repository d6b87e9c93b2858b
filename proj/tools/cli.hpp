#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptreg/llm_gateway.hpp"

namespace promptreg::cli {

enum ExitCode : int { kOk = 0, kRuntimeAbort = 1, kUsage = 2 };

/// {"engines": {name: EngineConfig...}, "roles": {"forward": name, ...}}.
/// A role absent from "roles" uses the engine named "default".
struct RoleOverrides {
  std::string forward;
  std::string gradient;
  std::string regularization;
  std::string optimizer;
};

RoleAssignment resolve_engines(const nlohmann::json& file, const RoleOverrides& overrides);
RoleAssignment load_engines_file(const std::filesystem::path& path, const RoleOverrides& overrides);

/// Whole command line, argv[0] included. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace promptreg::cli
