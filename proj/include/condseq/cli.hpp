#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace condseq {

/// Exit statuses of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

/// Runs one `condseq` subcommand (curate, synth, train, generate, evaluate,
/// inspect). `args` excludes the program name. Results go to `out`; errors
/// are printed to `err` as one JSON line.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace condseq
