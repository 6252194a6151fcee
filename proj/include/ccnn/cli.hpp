#pragma once

#include <iosfwd>

namespace ccnn {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // also: gradient check above tolerance
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDivergence = 4;

// Gradient checks fail above this relative error.
inline constexpr double kGradCheckTolerance = 1e-3;

// Subcommands: train, predict, eval, synth, gradcheck, inspect.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ccnn
