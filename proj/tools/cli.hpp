#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pfxlm::cli {

enum ExitCode : int { kSuccess = 0, kInternalError = 1, kUsageError = 2 };

/// Runs one command line (args excludes the program name) and returns the exit
/// code. Reports go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Worker count for generation: PFXLM_THREADS when set to a positive integer,
/// otherwise the hardware concurrency (at least 1).
unsigned worker_threads();

}  // namespace pfxlm::cli
