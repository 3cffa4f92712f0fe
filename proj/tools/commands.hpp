#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vamp::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericFailure = 3 };

// Runs one command line (without the program name). Output goes to out,
// diagnostics to err; the return value is the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vamp::cli
