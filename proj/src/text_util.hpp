#ifndef EFFECTMOD_TEXT_UTIL_HPP
#define EFFECTMOD_TEXT_UTIL_HPP

#include <charconv>
#include <cstdio>
#include <string>
#include <vector>

namespace effectmod {

// Shortest decimal form that round-trips the double.
inline std::string format_double(double value) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

inline std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, value);
  return std::string(buf);
}

inline std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace effectmod

#endif
