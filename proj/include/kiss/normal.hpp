#pragma once

namespace kiss {

inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

/// Standard normal density.
double normal_pdf(double x);

/// Standard normal distribution function, via erfc (relative accuracy near 1 ulp).
double normal_cdf(double x);

/// Inverse of normal_cdf on (0, 1); accurate to ~1e-15.
double normal_quantile(double p);

/// Rational approximation of the normal quantile without refinement
/// (relative error below 1.2e-9). Used for scenario generation only.
double fast_normal_quantile(double p);

}  // namespace kiss
