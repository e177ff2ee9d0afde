#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "mvpower/error.hpp"

namespace mvpower::cli {

enum ExitCode : int { ok = 0, usage = 2, numeric = 3, io = 4 };

int exit_code(ErrorKind kind);

/// Runs one invocation. `args` excludes the program name. Everything the
/// process would print goes to `out` and `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mvpower::cli
