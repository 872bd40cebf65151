#pragma once

#include <charconv>
#include <string>

namespace eeqe {

// Shortest round-trip decimal form; stable across runs for byte-identical CSVs.
inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace eeqe
