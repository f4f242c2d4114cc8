#ifndef EFFECTMOD_CLI_HPP
#define EFFECTMOD_CLI_HPP

#include <string>
#include <vector>

namespace effectmod {

// Entry point behind main(), separated so tests can drive the CLI in
// process. Returns the process exit code: 0 success, 1 input error,
// 2 numeric failure. Errors are reported as a JSON object on stderr.
int cli_main(const std::vector<std::string>& args);
int cli_main(int argc, char** argv);

}  // namespace effectmod

#endif
