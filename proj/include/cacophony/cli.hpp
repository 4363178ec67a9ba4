#pragma once

#include <string>
#include <vector>

namespace cacophony {

// Dispatch for the cacophony command line. Exit code 0 on success, 1 on
// usage errors, 2 on runtime errors.
int cli_run(const std::vector<std::string>& args);
int cli_run(int argc, char** argv);

}  // namespace cacophony
