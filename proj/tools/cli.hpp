#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dssd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsage = 2;

/// Runs one subcommand. `args` excludes the program name. Reports go to
/// `out` as JSON lines (or tables with --pretty), logs and errors to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dssd::cli
