#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kelp {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitQuality = 3;

/// Entry point of the `kelp` command line tool. Returns the process exit
/// code: 0 success, 2 input or validation error, 3 experiment-quality failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

} // namespace kelp
