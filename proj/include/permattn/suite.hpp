#pragma once

#include "permattn/config.hpp"
#include "permattn/verifier.hpp"

namespace permattn {

// The invariant suite behind `permattn verify`: oracle agreement of the
// linear paths, shift invariance, row sums, positivity, the relative and
// bounded checks (with their negative controls), 2D encoding and a gradient
// check, all at the dimensions of cfg. Throws ValidationError / UsageError if
// cfg itself is invalid.
verify::Report run_suite(const SuiteConfig& cfg);

}  // namespace permattn
