#pragma once

namespace mib::cli {

// Full command-line entry point (argv[0] is the program name). Returns the
// process exit code: 0 on success, 2 on usage or precondition errors, 3 on
// numeric failures, 1 on IO problems.
int run(int argc, const char* const* argv);

}  // namespace mib::cli
