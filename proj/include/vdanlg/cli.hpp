#pragma once

// Command-line entry point: train | adapt | generate | evaluate.
//
// Exit codes: 0 success, 1 usage, 2 config, 3 data, 4 checkpoint.

#include <iosfwd>
#include <string>
#include <vector>

namespace vdanlg::cli {

enum ExitCode { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kCheckpoint = 4 };

// `args` excludes the program name.
int run(const std::vector<std::string>& args);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vdanlg::cli
