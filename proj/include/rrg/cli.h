#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rrg {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitInput = 4,
};

/// Runs `lmrrg <subcommand> ...`; args[0] is the program name. Reports go
/// to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Keeps freed activation buffers in the heap instead of handing them back
/// to the OS after every op. Training allocates and frees the same sizes
/// thousands of times per step; no-op outside glibc.
void tune_allocator();

}  // namespace rrg
