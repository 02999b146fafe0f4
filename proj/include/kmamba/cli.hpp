#pragma once

#include <iosfwd>
#include <string>
#include <vector>

// Command-line front end: gen-data, fit-stats, train, predict, rollout,
// evaluate, export. Exit codes: 0 ok, 1 other failure, 2 config, 3 numerical,
// 4 I/O.

namespace kmamba::cli {

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kmamba::cli
