#pragma once

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "aoip/errors.hpp"

namespace aoip {

inline std::string strprintf(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  va_list args2;
  va_copy(args2, args);
  int n = std::vsnprintf(nullptr, 0, fmt, args);
  va_end(args);
  std::string out(n > 0 ? static_cast<size_t>(n) : 0, '\0');
  if (n > 0) std::vsnprintf(out.data(), out.size() + 1, fmt, args2);
  va_end(args2);
  return out;
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(Err::IoFailure, "cannot create directory " + dir.string());
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(Err::NotFound, p.string());
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  return data;
}

inline void write_file_bytes(const std::filesystem::path& p,
                             const std::uint8_t* data, size_t size) {
  if (p.has_parent_path()) ensure_dir(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) fail(Err::IoFailure, "cannot open " + p.string());
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) fail(Err::IoFailure, "short write to " + p.string());
}

inline void write_file_text(const std::filesystem::path& p, const std::string& text) {
  write_file_bytes(p, reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
}

// Nearest-rank percentile over a copy of the input; p in [0, 100].
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  size_t lo = static_cast<size_t>(std::floor(rank));
  size_t hi = static_cast<size_t>(std::ceil(rank));
  double frac = rank - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

// Round half away from zero to the nearest integer.
inline std::int64_t round_half_away(double x) {
  return static_cast<std::int64_t>(x >= 0 ? std::floor(x + 0.5) : std::ceil(x - 0.5));
}

}  // namespace aoip
