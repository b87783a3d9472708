#pragma once

#include <span>

namespace vbmis {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

/// log Γ(x) for x > 0 (Lanczos, g = 7). Reflection handles x < 0.5.
double log_gamma(double x);

/// ψ(x) = d/dx log Γ(x), x > 0.
double digamma(double x);

/// log k!, from a table for small integers.
double log_factorial(double k);

double normal_cdf(double z);

/// Stable log Σ exp(v_i). Empty input gives -inf.
double log_sum_exp(std::span<const double> v);

}  // namespace vbmis
