#pragma once

#include <string>
#include <vector>

namespace imitate {

/// Exit codes of the `imitate` executable.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

/// Entry point of the `imitate` executable: gen, train, eval, diag, imitate.
int run_cli(int argc, const char* const* argv);

/// Convenience overload; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace imitate
