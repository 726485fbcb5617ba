#pragma once

#include <iosfwd>

namespace certsmooth {

/// The `certsmooth` command line: train, certify, attack, landscape, smooth and
/// bench. Returns 0 on success, 1 on runtime failure, 2 on usage or config errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace certsmooth
