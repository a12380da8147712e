#pragma once

// Command-line entry point. Subcommands: generate-data, train, eval,
// ablate, sweep, plot, ssm-verify. Returns the process exit code:
// 0 success, 1 usage error, 2 verification failure, 3 runtime or numeric
// failure. All diagnostics go to stderr; results and reports to stdout.

namespace sr2 {

int run_cli(int argc, const char* const* argv);

}  // namespace sr2
