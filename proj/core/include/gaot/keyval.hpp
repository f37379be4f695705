#pragma once

// Scalar and list (de)serialization primitives for the key=value
// configuration grammar.  Doubles use shortest round-trip formatting, so a
// parse -> emit -> parse cycle reproduces values bit-exactly.

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gaot::kv {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  size_t start = 0;
  while (true) {
    const size_t comma = s.find(',', start);
    parts.push_back(trim(s.substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return parts;
}

[[noreturn]] inline void bad_value(const std::string& key, const std::string& value,
                                   const char* expected) {
  throw std::runtime_error("key '" + key + "': cannot parse '" + value + "' as " + expected);
}

inline int64_t parse_i64(const std::string& key, const std::string& value) {
  int64_t out = 0;
  const char* end = value.data() + value.size();
  auto [p, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || p != end) bad_value(key, value, "an integer");
  return out;
}

inline uint64_t parse_u64(const std::string& key, const std::string& value) {
  uint64_t out = 0;
  const char* end = value.data() + value.size();
  auto [p, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || p != end) bad_value(key, value, "an unsigned integer");
  return out;
}

inline double parse_f64(const std::string& key, const std::string& value) {
  double out = 0.0;
  const char* end = value.data() + value.size();
  auto [p, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || p != end) bad_value(key, value, "a real number");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "on") return true;
  if (value == "off") return false;
  bad_value(key, value, "'on' or 'off'");
}

inline std::vector<int64_t> parse_i64_list(const std::string& key, const std::string& value) {
  std::vector<int64_t> out;
  for (const auto& part : split_list(value)) out.push_back(parse_i64(key, part));
  return out;
}

inline std::vector<double> parse_f64_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (const auto& part : split_list(value)) out.push_back(parse_f64(key, part));
  return out;
}

inline std::string fmt_i64(int64_t v) { return std::to_string(v); }

inline std::string fmt_u64(uint64_t v) { return std::to_string(v); }

inline std::string fmt_f64(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::runtime_error("cannot format real value");
  return std::string(buf, p);
}

inline std::string fmt_bool(bool v) { return v ? "on" : "off"; }

template <class T, class Fmt>
std::string fmt_list(const std::vector<T>& v, Fmt fmt) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += fmt(v[i]);
  }
  return out;
}

inline std::string fmt_i64_list(const std::vector<int64_t>& v) { return fmt_list(v, fmt_i64); }
inline std::string fmt_f64_list(const std::vector<double>& v) { return fmt_list(v, fmt_f64); }

}  // namespace gaot::kv
