#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cldm {

using Vec = Eigen::VectorXd;
// Row-major so that raw tensor storage matches the checkpoint wire order.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Bad or inconsistent configuration (CLI exit code 2).
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite values where finite numbers are required (CLI exit code 3).
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem failures (CLI exit code 4).
class io_error : public std::runtime_error {
 public:
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Shortest decimal string that round-trips the exact double value.
/// All text outputs use this so reruns are byte-identical.
inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& what = "value") {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw config_error("cannot parse '" + std::string(s) + "' as a number for " + what);
  }
  return v;
}

inline std::int64_t parse_int(std::string_view s, const std::string& what = "value") {
  std::int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw config_error("cannot parse '" + std::string(s) + "' as an integer for " + what);
  }
  return v;
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace cldm
