#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace race::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kSeedEnv = "RACE_ATTN_SEED";

// Runs the race_attn command line. `args` excludes the program name.
// Subcommands: bench, validate, gradcheck, demo.
// Returns 0 on success, 1 when a checked suite fails, 2 on usage errors.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace race::cli
