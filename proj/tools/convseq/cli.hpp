#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace convseq::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigError = 1,
  kRuntimeError = 2,
  kGradcheckFailed = 3,
};

// Runs `convseq <args...>` (args excludes the program name). Results and
// summaries go to `out`; diagnostics go to stderr.
int run(const std::vector<std::string>& args, std::ostream& out);

// Log level from CONVSEQ_LOG_LEVEL (trace, debug, info, warn, error, off).
void configure_logging();

}  // namespace convseq::cli
