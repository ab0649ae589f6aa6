#pragma once

namespace sosuq::cli {

/// Complete command-line surface (subcommands dataset, train, reconstruct,
/// uncertainty, select-eval, export-text). Returns the process exit code:
/// 0 success, 2 configuration error, 3 I/O error, 4 numerical failure.
int run_main(int argc, const char* const* argv);

} // namespace sosuq::cli
