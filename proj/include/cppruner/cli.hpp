#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cppruner {

/// Exit codes: 0 success, 1 usage, 2 runtime failure, 3 failed verification.
int cli_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int cli_main(int argc, char** argv);

} // namespace cppruner
