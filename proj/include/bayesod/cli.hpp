#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace bayesod {

enum ExitCode : int {
  kExitSuccess = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitNumerical = 3,
};

/// Entry point of the `bayesod` tool. `args` excludes the program name.
/// Subcommands: simulate, fuse, eval, loss-check, render.
int cli_main(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace bayesod
