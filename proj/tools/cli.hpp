#pragma once

#include <iosfwd>

namespace jscc::cli {

/// Entry point of the jscc tool. Returns 0 on success, 2 on a usage error
/// (unknown subcommand or flag) and 1 on any other failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace jscc::cli
