#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace moistsw {

/// Command-line entry point. args excludes the program name.
/// Returns 0 on success, 1 on a usage or configuration error, 2 on a numerical failure.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace moistsw
