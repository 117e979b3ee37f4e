#pragma once

#include <iosfwd>

namespace ivdur {

inline constexpr const char* kVersion = "0.1.0";

// Exit codes of the command-line front end.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitDataError = 2, kExitNotConverged = 3 };

// Entry point of the `ivdur` binary; argv[0] is the program name.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ivdur
