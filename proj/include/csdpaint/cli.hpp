#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace csdpaint {

// Exit statuses of the command-line front end.
enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitConfigError = 2,
  kExitDiverged = 3,
};

// Runs one invocation ("run", "bake", "gradcheck", "inspect",
// "protocol-check"). `args` excludes the program name.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace csdpaint
