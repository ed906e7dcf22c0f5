#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace srvae {

/// Entry point of the `srvae` executable. args[0] is the program name.
/// Returns 0 on success; errors go to `err` with a nonzero code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace srvae
