#pragma once

#include <iosfwd>

#include "forage/config.hpp"

namespace forage::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kInputError = 2, kInternal = 3 };

/// Entry point of the `forage-lens` executable.
int run(int argc, char** argv);
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

// Subcommands. Each reads its inputs from `config.paths`, writes its outputs
// under `config.paths.out` and reports warnings on `err`.
void cmd_label(const RunConfig& config, std::ostream& err);
void cmd_stats(const RunConfig& config, std::ostream& err);
void cmd_lens(const RunConfig& config, std::ostream& err);
void cmd_probe(const RunConfig& config, std::ostream& err);
void cmd_contrastive(const RunConfig& config, std::ostream& err);

}  // namespace forage::cli
