#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace tlab {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;       // usage errors, unreadable files, failed stages
inline constexpr int kExitValidation = 2;  // dataset failed validation

/// Runs `tlab <subcommand> ...`; `args` excludes the program name.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace tlab
