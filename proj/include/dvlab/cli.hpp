#pragma once

// Batch front door: one subcommand per module (oracle, fk, couple, nls, ldp),
// each reading a config file and writing CSV/JSON artifacts plus
// manifest.json into the output directory.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace dvlab::cli {

enum ExitCode : int {
  kOk = 0,
  kRuntimeFailure = 1,  // simulation blow-up, non-convergence, other errors
  kInvalidConfig = 2,   // unreadable or invalid config, bad flags
  kCheckFailed = 3,     // artifacts written but a hard invariant check failed
  kOutputFailure = 4,   // output directory or file not writable
};

struct RunOptions {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out_dir = ".";
  unsigned workers = 1;
};

const std::vector<std::string>& subcommands();

/// Runs one subcommand; diagnostics go to `err`. Returns an ExitCode.
int run_command(const std::string& subcommand, const RunOptions& options, std::ostream& err);

/// Command-line entry point (argument parsing included).
int main(int argc, char** argv);

}  // namespace dvlab::cli
