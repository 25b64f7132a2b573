#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lineagetrack::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Runs the command line `args` (args[0] is the program name). Failures print
/// one line "error: code=<code> message=<text>" to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace lineagetrack::cli
