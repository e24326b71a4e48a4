#pragma once

// Numerically exact g-and-k density. x = G(u) is inverted by bracketed
// bisection and the density is the reciprocal quantile density 1 / G'(u*),
// summed over every branch when G is not monotone (which happens for small
// theta[3] inside the prior box).

#include <span>
#include <vector>

namespace mlsbi {

class GkDensityOracle {
 public:
  /// Noise range is restricted to (eps, 1 - eps), matching the simulator clamp.
  explicit GkDensityOracle(std::span<const double> theta, double eps = 1e-9);

  /// log p(x | theta); -inf outside the range of G on (eps, 1 - eps).
  double logpdf(double x) const;
  double pdf(double x) const;
  /// P(X <= x), as the measure of {u : G(u) <= x}.
  double cdf(double x) const;
  /// Roots u* of G(u) = x, one per monotone branch that brackets x.
  std::vector<double> inverse(double x) const;
  bool monotone() const { return segments_.size() == 1; }

  static constexpr double kRootTolerance = 1e-12;   // on the normal score, finer than 1e-12 in u
  static constexpr double kDerivativeStep = 1e-6;

 private:
  struct Segment {
    std::size_t begin, end;  // table indices, inclusive
    bool increasing;
  };

  double g(double z) const;
  double solve(const Segment& seg, double x) const;
  double density_at(double z) const;

  double theta_[4];
  std::vector<double> z_;
  std::vector<double> g_;
  std::vector<Segment> segments_;
};

double gk_exact_logpdf(std::span<const double> theta, double x);

}  // namespace mlsbi
