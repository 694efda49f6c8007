#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace bayernet {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

// Runs one subcommand (mosaic, train, detect, match, eval). `args` excludes
// the program name. Config keys are given as --key=value after the
// subcommand or in a --config file (key=value text or a previous
// manifest.json).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bayernet
