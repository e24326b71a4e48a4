#include "mlsbi/special.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mlsbi {

namespace {

constexpr double kSqrt2 = 1.41421356237309504880;
constexpr double kTwoOverSqrtPi = 1.12837916709551257390;

template <std::size_t N>
double horner(const double (&c)[N], double x) {
  double acc = c[N - 1];
  for (std::size_t i = N - 1; i-- > 0;) acc = acc * x + c[i];
  return acc;
}

// AS241 (PPND16) coefficient sets, lowest order first.
constexpr double kA[] = {3.3871328727963666080e0,  1.3314166789178437745e+2,
                         1.9715909503065514427e+3, 1.3731693765509461125e+4,
                         4.5921953931549871457e+4, 6.7265770927008700853e+4,
                         3.3430575583588128105e+4, 2.5090809287301226727e+3};
constexpr double kB[] = {1.0,
                         4.2313330701600911252e+1, 6.8718700749205790830e+2,
                         5.3941960214247511077e+3, 2.1213794301586595867e+4,
                         3.9307895800092710610e+4, 2.8729085735721942674e+4,
                         5.2264952788528545610e+3};
constexpr double kC[] = {1.42343711074968357734e0, 4.63033784615654529590e0,
                         5.76949722146069140550e0, 3.64784832476320460504e0,
                         1.27045825245236838258e0, 2.41780725177450611770e-1,
                         2.27238449892691845833e-2, 7.74545014278341407640e-4};
constexpr double kD[] = {1.0,
                         2.05319162663775882187e0, 1.67638483018380384940e0,
                         6.89767334985100004550e-1, 1.48103976427480074590e-1,
                         1.51986665636164571966e-2, 5.47593808499534494600e-4,
                         1.05075007164441684324e-9};
constexpr double kE[] = {6.65790464350110377720e0, 5.46378491116411436990e0,
                         1.78482653991729133580e0, 2.96560571828504891230e-1,
                         2.65321895265761230930e-2, 1.24266094738807843860e-3,
                         2.71155556874348757815e-5, 2.01033439929228813265e-7};
constexpr double kF[] = {1.0,
                         5.99832206555887937690e-1, 1.36929880922735805310e-1,
                         1.48753612908506148525e-2, 7.86869131145613259100e-4,
                         1.84631831751005468180e-5, 1.42151175831644588870e-7,
                         2.04426310338993978564e-15};

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }

double normal_sf(double x) { return 0.5 * std::erfc(x / kSqrt2); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p must lie in (0, 1)");
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q * horner(kA, r) / horner(kB, r);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = horner(kC, r) / horner(kD, r);
  } else {
    r -= 5.0;
    val = horner(kE, r) / horner(kF, r);
  }
  return q < 0.0 ? -val : val;
}

double erfinv(double v) {
  if (!(v > -1.0 && v < 1.0)) throw std::invalid_argument("erfinv: argument must lie in (-1, 1)");
  if (v == 0.0) return 0.0;
  const double a = std::fabs(v);
  const double sign = v < 0.0 ? -1.0 : 1.0;
  if (a <= 0.5) {
    double x = normal_quantile(0.5 * (1.0 + a)) / kSqrt2;
    for (int it = 0; it < 2; ++it) x -= (std::erf(x) - a) / (kTwoOverSqrtPi * std::exp(-x * x));
    return sign * x;
  }
  // 1 - a is exact here (Sterbenz), so work with the complementary function.
  const double w = 1.0 - a;
  double x = -normal_quantile(0.5 * w) / kSqrt2;
  for (int it = 0; it < 2; ++it) x += (std::erfc(x) - w) / (kTwoOverSqrtPi * std::exp(-x * x));
  return sign * x;
}

double erfinv_taylor3(double v) {
  return 0.5 * std::sqrt(kPi) * (v + (kPi / 12.0) * v * v * v);
}

double erfinv_taylor3_pi_over_2(double v) {
  return 0.5 * kPi * (v + (kPi / 12.0) * v * v * v);
}

double log_normal_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - kLogSqrt2Pi;
}

double truncated_normal_positive_quantile(double mean, double sd, double u) {
  if (!(sd > 0.0)) throw std::invalid_argument("truncated normal: sd must be positive");
  if (!(u > 0.0 && u < 1.0)) throw std::invalid_argument("truncated normal: u must lie in (0, 1)");
  // Standardised lower bound alpha = -mean/sd. With tail = P(Z > alpha),
  // the quantile is -Phi^{-1}((1 - u) * tail), stable for any alpha.
  const double alpha = -mean / sd;
  const double tail = normal_sf(alpha);
  double y;
  if (tail > 0.0 && (1.0 - u) * tail > 0.0) {
    y = -normal_quantile((1.0 - u) * tail);
  } else {
    // Truncation point sits ~38 sd above the mean; mass piles up at the bound.
    y = alpha;
  }
  double x = mean + sd * y;
  if (!(x > 0.0)) x = std::numeric_limits<double>::min();
  return x;
}

double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace mlsbi
