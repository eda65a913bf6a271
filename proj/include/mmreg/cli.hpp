#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mmreg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Runs one subcommand. `args` excludes the program name.
/// Returns 0 on success, 1 on usage errors (usage text on `err`), 2 on data or computation errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace mmreg::cli
