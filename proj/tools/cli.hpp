#pragma once

// Command-line driver. `run` is the whole program minus process plumbing so
// tests can call it in-process.

#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace nvspin::cli {

inline constexpr std::string_view kToolVersion = "nvspin 1.0.0";

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsageError = 1;
inline constexpr int kNumericError = 2;

// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nvspin::cli
