#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace claimcast {

// Runs one claimcast command line. Returns the process exit code; messages go
// to `out` and errors to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace claimcast
