#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace befa::cli {

/// Parses `args` (program name excluded) and runs one subcommand. Progress
/// goes to `out`, errors to `err`. Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace befa::cli
