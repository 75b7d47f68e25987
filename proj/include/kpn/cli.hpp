#pragma once

#include <ostream>

namespace kpn {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// The `kpntrack` command line: train | track | eval | sweep | synth | viz.
/// Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace kpn
