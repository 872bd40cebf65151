#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace eeqe::cli {

/// Runs one command line (without the program name). Writes the command's
/// artifacts plus manifest.json into --output-dir and returns the exit status:
/// 0 on success, 1 on a module error or failed check, 2 on bad usage.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

}  // namespace eeqe::cli
