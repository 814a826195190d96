#pragma once

// Command-line front end. The logic lives here so tests can drive it without
// spawning processes.

#include <iosfwd>

namespace adapt {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitInternal = 3;

/// Commands: run, simulate, baselines, serve, replay.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace adapt
