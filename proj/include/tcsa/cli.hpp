#pragma once

#include <string>
#include <vector>

namespace tcsa::cli {

/// Entry point of the `tcsa` tool. Subcommands: synth-data, train, eval, gradcam, ablate, seed-sweep.
/// Returns 0 on success, 1 on configuration or data errors, 2 on usage errors.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace tcsa::cli
