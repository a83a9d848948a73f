#pragma once

#include <iosfwd>

namespace cdflow::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;      // bad flags, config or input files
inline constexpr int kExitNumerical = 2;  // non-finite loss, singular factor

// Parses argv (argv[0] is the program name) and runs one subcommand.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cdflow::cli
