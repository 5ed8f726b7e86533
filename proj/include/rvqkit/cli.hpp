#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace rvqkit::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kDataError = 3,
  kNumericalFailure = 4,
};

// Runs one `rvqkit` invocation. `args` excludes the program name. Reports
// go to `out` as `key: value` lines, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rvqkit::cli
