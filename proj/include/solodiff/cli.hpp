#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace solodiff {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs the command-line tool. `args` excludes the program name. Progress
/// goes to `err`; the success summary goes to `out`; failures print one JSON
/// error record to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace solodiff
