#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "estkit/core/error.hpp"
#include "estkit/core/types.hpp"

namespace estkit::bench {

// per_element divides the summed squared error by T' * M; literal divides by
// T' only.
enum class RmseConvention { per_element, literal };

inline RmseConvention parse_rmse_convention(std::string_view s) {
  if (s == "per_element") return RmseConvention::per_element;
  if (s == "literal") return RmseConvention::literal;
  throw ConfigError("unknown rmse convention '" + std::string(s) + "' (expected per_element or literal)");
}

inline std::string to_string(RmseConvention c) { return c == RmseConvention::per_element ? "per_element" : "literal"; }

inline double rmse(const Series& truth, const Series& est, RmseConvention conv = RmseConvention::per_element) {
  if (truth.rows() != est.rows() || truth.cols() != est.cols())
    throw ShapeError("rmse: truth is " + std::to_string(truth.rows()) + "x" + std::to_string(truth.cols()) +
                     ", estimate is " + std::to_string(est.rows()) + "x" + std::to_string(est.cols()));
  if (truth.rows() == 0) throw ShapeError("rmse of an empty series");
  double denom = static_cast<double>(truth.rows());
  if (conv == RmseConvention::per_element) denom *= static_cast<double>(truth.cols());
  return std::sqrt((truth - est).squaredNorm() / denom);
}

// RMSE over steps warmup .. T-1.
inline double trajectory_rmse(const Series& truth, const Series& est, Index warmup,
                              RmseConvention conv = RmseConvention::per_element) {
  if (warmup < 0 || warmup >= truth.rows()) throw ShapeError("warm-up covers the whole trajectory");
  const Index n = truth.rows() - warmup;
  if (est.rows() != truth.rows()) throw ShapeError("rmse: estimate length differs from truth");
  return rmse(truth.bottomRows(n), est.bottomRows(n), conv);
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double hi = *mid;
  return 0.5 * (*std::max_element(v.begin(), mid) + hi);
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for fewer than two values.
inline double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace estkit::bench
