#pragma once

// `tokenlens <verb> [flags]` entry point.

#include <iosfwd>
#include <string>
#include <vector>

#include "tokenlens/error.hpp"

namespace tokenlens::cli {

/// Process exit codes, one per error class.
enum ExitCode : int {
  kOk = 0,
  kOther = 1,
  kUsage = 2,
  kMissingInput = 3,
  kFormat = 4,
  kNumerical = 5,  // numerical failure or degenerate input
  kIo = 6,
  kContract = 7,
};

int exit_code_for(ErrorKind kind);

/// Runs one command line. `args` excludes the program name. Results go to
/// files, human-readable summaries to `out`, progress and errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Verb names in help order.
std::vector<std::string> verbs();

/// Every long flag name of a verb (or of the top level when verb is empty),
/// for checking help coverage.
std::vector<std::string> flag_names(const std::string& verb);

}  // namespace tokenlens::cli
