#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ilog::cli {

/// Exit codes: 0 success, 1 validation or domain failure, 2 usage error.
/// args[0] is the program name. Data goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace ilog::cli
