#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cfm::cli {

enum ExitCode : int {
    exit_ok = 0,
    exit_internal = 1,
    exit_usage = 2,
    exit_config_not_found = 3,
    exit_config_parse = 4,
    exit_config_schema = 5,
    exit_io = 6,
    exit_checkpoint = 7,
    exit_numeric = 8,
    exit_gradcheck = 9,
};

// Name of the environment variable holding the default output directory.
inline constexpr const char* output_root_env = "CFM_OUTPUT_ROOT";

// Runs one invocation. `args` excludes the program name. Normal output goes
// to `out`; failures print a single `error: code=... exit=... message="..."`
// line to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string help_footer();

}  // namespace cfm::cli
