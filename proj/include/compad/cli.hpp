#pragma once

// Command-line front end: synth, train, eval, infer and gradcheck.

#include <iosfwd>
#include <string>
#include <vector>

namespace compad::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// `args` excludes the program name. Output goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace compad::cli
