#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lpr {

/// Runs the `lpr` command line. `args` excludes the program name. Reports go
/// to `out` as one `key=value ...` record per line; usage and errors go to
/// `err`. Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lpr
