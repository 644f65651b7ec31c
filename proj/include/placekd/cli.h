#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace placekd {

// Entry point of the `placekd` tool. args excludes the program name. Errors
// are reported on `err` as a single JSON object; the return value is the exit
// code (0 success, 2 usage error, 1 any other failure).
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace placekd
