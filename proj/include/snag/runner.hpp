#pragma once

#include <string>
#include <vector>

namespace snag {

// Entry point behind main(): `snag <subcommand> --config <file> --out <dir>
// [--iterative]`. Subcommands: gen, train-kgc, train-ea, eval-kgc, eval-ea,
// ablate. Returns a process exit code; failures print to stderr.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace snag
