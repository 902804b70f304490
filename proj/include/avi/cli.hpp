#pragma once

#include <iosfwd>

namespace avi {

enum ExitCode { kExitOk = 0, kExitUsage = 2, kExitKb = 3, kExitBackend = 4 };

/// Entry point of the `avi` command: ingest, ask, eval, inspect.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace avi
