#pragma once

// The yolod command line: generate, train, eval, bench, curves, assign.
// Exit codes: 0 success, 2 usage or input error, 3 state or shape error.

#include <filesystem>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace yolod::tools {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitState = 3;

struct ConfigEntry {
  std::string key, value;
  int line = 0;
};

// UTF-8 key=value lines; '#' starts a comment, blank lines are skipped.
// Throws ConfigError naming the line for anything else.
std::vector<ConfigEntry> parse_config_file(const std::filesystem::path& path);

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace yolod::tools
