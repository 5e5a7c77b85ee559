#pragma once

#include <string>
#include <vector>

namespace lobmm::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsageError = 1;
inline constexpr int kDataError = 2;

// Runs the command line (args[0] is the program name).
int lobmm_main(const std::vector<std::string>& args);

}  // namespace lobmm::cli
