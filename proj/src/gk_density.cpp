#include "mlsbi/gk_density.hpp"

#include "mlsbi/simulators.hpp"
#include "mlsbi/special.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mlsbi {

namespace {
constexpr std::size_t kTableSize = 4001;

double std_normal_pdf(double z) { return std::exp(-0.5 * z * z - kLogSqrt2Pi); }
}  // namespace

GkDensityOracle::GkDensityOracle(std::span<const double> theta, double eps) {
  if (theta.size() != 4) throw std::invalid_argument("gk density: theta must have 4 components");
  if (!(theta[3] > 0.0)) throw std::invalid_argument("gk density: theta[3] must be positive");
  if (!(eps > 0.0 && eps < 0.5)) throw std::invalid_argument("gk density: eps must lie in (0, 0.5)");
  std::copy(theta.begin(), theta.end(), theta_);

  const double z_hi = -normal_quantile(eps);
  z_.resize(kTableSize);
  g_.resize(kTableSize);
  for (std::size_t i = 0; i < kTableSize; ++i) {
    z_[i] = -z_hi + 2.0 * z_hi * static_cast<double>(i) / static_cast<double>(kTableSize - 1);
    g_[i] = g(z_[i]);
  }

  std::size_t start = 0;
  bool up = g_[1] >= g_[0];
  for (std::size_t i = 1; i + 1 < kTableSize; ++i) {
    const double d = g_[i + 1] - g_[i];
    const bool next_up = d > 0.0 || (d == 0.0 && up);
    if (next_up != up) {
      segments_.push_back({start, i, up});
      start = i;
      up = next_up;
    }
  }
  segments_.push_back({start, kTableSize - 1, up});
}

double GkDensityOracle::g(double z) const { return gk_quantile_z(theta_, z); }

double GkDensityOracle::solve(const Segment& seg, double x) const {
  // Locate the bracketing table cell, then bisect on the normal score.
  std::size_t lo = seg.begin, hi = seg.end;
  auto below = [&](std::size_t i) { return seg.increasing ? g_[i] <= x : g_[i] >= x; };
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    (below(mid) ? lo : hi) = mid;
  }
  double a = z_[lo], b = z_[hi];
  for (int it = 0; it < 200 && b - a > kRootTolerance; ++it) {
    const double mid = 0.5 * (a + b);
    const bool mid_below = seg.increasing ? g(mid) <= x : g(mid) >= x;
    (mid_below ? a : b) = mid;
  }
  return 0.5 * (a + b);
}

double GkDensityOracle::density_at(double z) const {
  const double h = kDerivativeStep;
  const double dgdz = (g(z + h) - g(z - h)) / (2.0 * h);
  // dG/du = dG/dz / phi(z); density is its reciprocal.
  if (dgdz == 0.0) return std::numeric_limits<double>::infinity();
  return std_normal_pdf(z) / std::fabs(dgdz);
}

std::vector<double> GkDensityOracle::inverse(double x) const {
  std::vector<double> roots;
  for (const auto& seg : segments_) {
    const double ga = g_[seg.begin], gb = g_[seg.end];
    if (x < std::min(ga, gb) || x > std::max(ga, gb)) continue;
    roots.push_back(normal_cdf(solve(seg, x)));
  }
  return roots;
}

double GkDensityOracle::pdf(double x) const {
  double total = 0.0;
  for (const auto& seg : segments_) {
    const double ga = g_[seg.begin], gb = g_[seg.end];
    if (x < std::min(ga, gb) || x > std::max(ga, gb)) continue;
    total += density_at(solve(seg, x));
  }
  return total;
}

double GkDensityOracle::logpdf(double x) const {
  if (!std::isfinite(x)) throw std::invalid_argument("gk density: x must be finite");
  const double p = pdf(x);
  return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
}

double GkDensityOracle::cdf(double x) const {
  double mass = 0.0;
  for (const auto& seg : segments_) {
    const double za = z_[seg.begin], zb = z_[seg.end];
    const double ga = g_[seg.begin], gb = g_[seg.end];
    if (seg.increasing) {
      if (x < ga) continue;
      const double r = x >= gb ? zb : solve(seg, x);
      mass += normal_cdf(r) - normal_cdf(za);
    } else {
      if (x < gb) continue;
      const double r = x >= ga ? za : solve(seg, x);
      mass += normal_cdf(zb) - normal_cdf(r);
    }
  }
  return mass;
}

double gk_exact_logpdf(std::span<const double> theta, double x) {
  return GkDensityOracle(theta).logpdf(x);
}

}  // namespace mlsbi
