#pragma once

#include <charconv>
#include <cstdio>
#include <string>

namespace stopline {

/// Round-trip decimal form used in every CSV we write.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Shortest decimal form that reads back to the same double.
inline std::string fmt_short(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc{} ? std::string(buf, end) : fmt(v);
}

} // namespace stopline
