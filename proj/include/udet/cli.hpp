#pragma once

#include <iosfwd>

namespace udet {

inline constexpr const char* kVersion = "1.0.0";

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitCheck = 3 };

/// Entry point of the `udet` tool. Commands: synth, train, eval, predict,
/// gradcheck, params.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace udet
