#pragma once

#include <charconv>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "canskew/error.hpp"

// Locale-independent number formatting shared by the writers.
namespace canskew::text {

/// Shortest decimal text that reads back to exactly `v`.
inline std::string fmt(double v) {
  if (v == std::numeric_limits<double>::infinity()) return "inf";
  if (v == -std::numeric_limits<double>::infinity()) return "-inf";
  if (v != v) return "nan";
  if (v == 0.0) return "0";  // folds -0
  char buf[64];
  const double mag = v < 0 ? -v : v;
  const auto r = mag >= 1e-6 && mag < 1e16 ? std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed)
                                           : std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string fmt(std::int64_t v) { return std::to_string(v); }
inline std::string fmt(std::uint64_t v) { return std::to_string(v); }

inline std::optional<double> parse_double(std::string_view s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

template <class Int>
std::optional<Int> parse_int(std::string_view s, int base = 10) {
  Int v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (s.empty() || r.ec != std::errc{} || r.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline bool is_hex(std::string_view s) {
  for (char c : s)
    if (!((c >= '0' && c <= '9') || (c >= 'A' && c <= 'F') || (c >= 'a' && c <= 'f'))) return false;
  return !s.empty();
}

inline std::string hex(std::uint64_t v, int digits) {
  static const char* d = "0123456789ABCDEF";
  std::string out(static_cast<std::size_t>(digits), '0');
  for (int i = digits - 1; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = d[v & 0xF];
  return out;
}

/// Lines without their terminators; a trailing newline adds no empty line.
inline std::vector<std::string_view> lines(std::string_view s) {
  std::vector<std::string_view> out;
  while (!s.empty()) {
    const auto nl = s.find('\n');
    auto line = s.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.push_back(line);
    if (nl == std::string_view::npos) break;
    s.remove_prefix(nl + 1);
  }
  return out;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline Error parse_error(std::size_t line, const std::string& what) {
  return Error(ErrorCode::Parse, "line " + std::to_string(line) + ": " + what, line);
}

}  // namespace canskew::text
