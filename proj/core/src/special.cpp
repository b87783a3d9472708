#include "vbmis/special.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace vbmis {

namespace {
constexpr double kLanczosG = 7.0;
constexpr double kLanczos[] = {0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
                               771.32342877765313,   -176.61502916214059,   12.507343278686905,
                               -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};
}  // namespace

double log_factorial(double k) {
  static const std::array<double, 1024> table = [] {
    std::array<double, 1024> t{};
    for (std::size_t i = 1; i < t.size(); ++i) t[i] = t[i - 1] + std::log(static_cast<double>(i));
    return t;
  }();
  if (k >= 0.0 && k < 1024.0 && k == std::floor(k)) return table[static_cast<std::size_t>(k)];
  return log_gamma(k + 1.0);
}

double log_gamma(double x) {
  if (x < 0.5) {
    // Γ(x)Γ(1-x) = π / sin(πx)
    return std::log(kPi / std::abs(std::sin(kPi * x))) - log_gamma(1.0 - x);
  }
  x -= 1.0;
  double a = kLanczos[0];
  const double t = x + kLanczosG + 0.5;
  for (int i = 1; i < 9; ++i) a += kLanczos[i] / (x + i);
  return kLogSqrt2Pi + (x + 0.5) * std::log(t) - t + std::log(a);
}

double digamma(double x) {
  double result = 0.0;
  while (x < 6.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double f = 1.0 / (x * x);
  result += std::log(x) - 0.5 / x -
            f * (1.0 / 12 - f * (1.0 / 120 - f * (1.0 / 252 - f * (1.0 / 240 - f * (1.0 / 132)))));
  return result;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace vbmis
