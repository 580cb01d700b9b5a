#pragma once

#include <iosfwd>

namespace mdood {

// Entry point of the `mdood` tool; returns the process exit code
// (0 ok, 2 I/O, 3 validation or usage, 4 numeric, 1 anything else).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mdood
