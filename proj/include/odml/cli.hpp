#pragma once

#include <iosfwd>

namespace odml {

/// Exit statuses of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitEstimation = 3;

/// Entry point of the odml tool; out receives tables and summaries, err the
/// diagnostics.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace odml
