#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fednnu::cli {

// Process exit codes. Every error path maps to exactly one of these.
enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,
  kAborted = 3,
  kConnectionRefused = 4,
  kVersionMismatch = 5,
};

// Entry point shared by the executable and the tests. `args` excludes the
// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Maps the in-flight exception to an exit code and prints it to `err`.
int report_exception(std::ostream& err);

}  // namespace fednnu::cli
