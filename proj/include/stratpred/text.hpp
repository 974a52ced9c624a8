#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace stratpred::text {

std::vector<std::string> split(std::string_view s, std::string_view sep);
std::string_view trim(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// One `key=value` entry with its source line.
struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// Parses flat `key=value` lines. Blank lines and `#` comments are skipped;
/// lines without '=' raise ConfigError.
std::vector<KeyValue> read_key_values(std::istream& in);

/// Strict numeric parsing; throw ConfigError naming `what` on failure.
long long parse_int(std::string_view s, std::string_view what);
double parse_double(std::string_view s, std::string_view what);
bool parse_bool(std::string_view s, std::string_view what);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace stratpred::text
