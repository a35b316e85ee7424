#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ktm {

/// Runs one command line (without the program name), e.g.
/// {"cv", "--data", "log.csv", "--preset", "iswf"}. Returns the exit code;
/// diagnostics go to `err`, tables and summaries to `out`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ktm
