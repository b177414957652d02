#pragma once

// Subcommand implementations. Each returns a process exit code or throws one
// of the capplan error types, which run_cli maps to exit codes.

#include <iosfwd>
#include <string>
#include <vector>

#include "cli/config.hpp"

namespace capplan::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitVerifyFailed = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitNumeric = 4,
  kExitShape = 5,
};

int cmd_gen_data(const RunConfig& config, std::ostream& out);
int cmd_train(const RunConfig& config, std::ostream& out);
int cmd_eval(const RunConfig& config, std::ostream& out);
int cmd_decode(const RunConfig& config, std::ostream& out);
int cmd_verify(const RunConfig& config, std::ostream& out, bool inject_fault);

struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::string detail;
};

// The oracle suites behind `verify`. With inject_fault one analytic gradient
// is scaled by 1.01 before comparison, so the gradient check must fail.
std::vector<CheckOutcome> run_verification(const RunConfig& config, bool inject_fault);

// Parses argv, dispatches, and maps errors to exit codes.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace capplan::cli
