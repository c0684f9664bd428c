#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gtanet {

// Exit codes: 0 success, 1 runtime error, 2 usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gtanet
