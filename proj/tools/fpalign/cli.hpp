#pragma once

#include <string>
#include <vector>

namespace fpalign::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigError = 1,
  kDataError = 2,
  kInternalError = 3,
};

/// Runs `fpalign <subcommand> ...`. Errors are reported as one JSON object
/// on stderr; the return value is the process exit code.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace fpalign::cli
