#pragma once

#include <string>
#include <vector>

namespace emt {

// Full command-line entry point, exposed as a library call so tests can drive
// it in-process. Returns the process exit code: 0 success, 2 configuration
// error, 3 data error, 4 numeric failure.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace emt
