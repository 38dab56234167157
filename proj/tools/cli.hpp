#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace irstyle::cli {

enum ExitCode : int { ok = 0, usage = 1, data = 2, numeric = 3 };

/// Runs one command. `args` excludes the program name. Reports go to `out`;
/// failures print one JSON line {"error", "exit_code", "message"} to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace irstyle::cli
