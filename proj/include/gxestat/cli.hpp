#pragma once

#include <iosfwd>

namespace gxe {

/// Command-line entry point: significance | stability | ammi | gge | all | serve.
/// Returns 0 on success, 1 on a usage error, 2 on a data or model error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gxe
