#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rkb {

// Exit codes: 0 success, 1 validation or usage error, 2 numerical check failed.
enum ExitCode : int { exit_ok = 0, exit_validation = 1, exit_numerical = 2 };

int run(int argc, char** argv);
// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Path of the bundled scalar configuration.
std::string bundled_config_path();

}  // namespace rkb
