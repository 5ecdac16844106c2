#pragma once

#include <iosfwd>

namespace permattn {

// Entry point of the permattn tool. Subcommands: verify, bench, order-stats,
// probe. Returns 0 on success, 1 when a check or training run fails and 2 on
// usage or configuration errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace permattn
