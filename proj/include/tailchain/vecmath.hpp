#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "tailchain/errors.hpp"

namespace tailchain {

using Vec = std::vector<double>;

inline double norm2(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

inline bool is_zero(std::span<const double> x) {
  for (double v : x)
    if (v != 0.0) return false;
  return true;
}

inline bool all_finite(std::span<const double> x) {
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

inline Vec scaled(std::span<const double> x, double c) {
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * c;
  return y;
}

// Euclidean distance between points of equal dimension.
inline double dist2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace tailchain
