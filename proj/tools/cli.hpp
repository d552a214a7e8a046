#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace iroam::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kIoError = 3, kNumericError = 4 };

/// Relative output paths are placed under this variable when it is set.
inline constexpr const char* kOutputRootEnv = "IROAM_OUTPUT_ROOT";

std::filesystem::path resolve_output(const std::string& path);

/// Runs one subcommand; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace iroam::cli
