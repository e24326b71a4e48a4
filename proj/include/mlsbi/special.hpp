#pragma once

// Scalar special functions shared by the simulators, the density estimator and
// the evaluation code.

namespace mlsbi {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

/// Standard normal CDF, accurate in both tails.
double normal_cdf(double x);

/// Upper tail 1 - Phi(x), accurate for large x.
double normal_sf(double x);

/// Standard normal quantile (Wichura's AS241, ~1e-16 relative accuracy).
/// Requires 0 < p < 1.
double normal_quantile(double p);

/// Inverse error function on (-1, 1), refined to machine precision.
double erfinv(double v);

/// Third-order Taylor expansion of erfinv around 0:
/// (sqrt(pi)/2) * (v + (pi/12) v^3).
double erfinv_taylor3(double v);

/// The low-fidelity expansion with a (pi/2) prefactor in place of sqrt(pi)/2.
double erfinv_taylor3_pi_over_2(double v);

double log_normal_pdf(double x, double mean, double sd);

/// Quantile of N(mean, sd^2) truncated to (0, inf) evaluated at u in (0, 1).
/// Always returns a strictly positive value.
double truncated_normal_positive_quantile(double mean, double sd, double u);

double softplus(double x);
double sigmoid(double x);

}  // namespace mlsbi
