#pragma once

#include <iosfwd>

namespace embedstory {

/// Entry point of the `embedstory` tool. Returns 0 on success, 2 on usage
/// errors and 1 on data, format or fingerprint errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace embedstory
