#pragma once

#include <string>
#include <vector>

namespace iagn::cli {

/// Process exit codes, stable for automation.
enum ExitCode : int { kSuccess = 0, kUsageError = 1, kRuntimeFailure = 2 };

/// Entry point for the `iagn` tool. Subcommands: train, eval, visualize,
/// preview-shuffle, gen-synth. `args` excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace iagn::cli
