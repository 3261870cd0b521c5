#pragma once

#include <iosfwd>

namespace iadccn::cli {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 2,
    kExitData = 3,
    kExitNumeric = 4,
};

/// Entry point of the `iadccn` tool, usable in-process.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace iadccn::cli
