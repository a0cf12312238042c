#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "sparsekit/error.hpp"

namespace sparsekit {

/// Shortest decimal that round-trips to the same double, always carrying a
/// decimal point or exponent ("1.0", not "1").
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

/// Quotes a CSV field when it contains a delimiter, quote or newline.
inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
  out << text;
  out.close();
  if (!out) fail(ErrorKind::io, "write failed on '" + path + "'");
}

}  // namespace sparsekit
