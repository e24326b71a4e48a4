#pragma once

// Metrics: grid KLD / ISE against a reference density, NLPD, sample-based
// HPD coverage, MMD and parameter recovery statistics.

#include "mlsbi/rng.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace mlsbi {

struct EvalGrid {
  double lo = -30.0;
  double hi = 30.0;
  std::size_t n_points = 2000;

  void validate() const;
  double step() const { return (hi - lo) / static_cast<double>(n_points - 1); }
  double point(std::size_t i) const;
  std::vector<double> points() const;
};

using LogDensity1D = std::function<double(double)>;

/// Forward KL(p || q) by trapezoid quadrature, with both densities first
/// renormalised over the grid. +inf when q vanishes where p does not.
double grid_kld(const LogDensity1D& exact_logpdf, const LogDensity1D& approx_logpdf, const EvalGrid& grid);
/// Same, on log-densities already evaluated at the grid points.
double grid_kld(const std::vector<double>& log_p, const std::vector<double>& log_q, const EvalGrid& grid);

/// Plain sum over grid points of (p - q)^2.
double grid_ise(const LogDensity1D& exact_logpdf, const LogDensity1D& approx_logpdf, const EvalGrid& grid);
double grid_ise(const std::vector<double>& log_p, const std::vector<double>& log_q);

/// -log q(theta_true); any non-finite result is returned as-is.
double nlpd(const std::function<double(const Vector&)>& posterior_logpdf, const Vector& theta_true);

struct RobustSummary {
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  std::size_t n_used = 0;
  std::size_t n_excluded = 0;  // non-finite values
};

/// Median and quartiles over the finite entries; throws when none is finite.
RobustSummary robust_summary(const std::vector<double>& values);

struct CoverageCurve {
  std::vector<double> levels;     // nominal credibility, 0..1
  std::vector<double> empirical;  // fraction covered
  std::size_t n_datasets = 0;
};

/// Nominal credibilities: n equidistant points in [0, 1].
std::vector<double> credibility_grid(std::size_t n = 101);

/// Coverage indicators of one dataset: for each credibility level c, whether
/// the true parameter lies in the sample-based HPD region holding c of the
/// draws. `draw_logpdf` holds the log-density of each posterior draw.
/// Throws for fewer than 10 draws.
std::vector<bool> hpd_covered(const Vector& draw_logpdf, double true_logpdf, const std::vector<double>& levels);

/// Accumulates per-dataset indicators into a curve.
class CoverageAccumulator {
 public:
  explicit CoverageAccumulator(std::vector<double> levels);
  void add(const std::vector<bool>& covered);
  CoverageCurve curve() const;

 private:
  std::vector<double> levels_;
  std::vector<std::size_t> hits_;
  std::size_t n_ = 0;
};

/// Two-sided central binomial band for a fraction with n trials at rate p.
std::pair<double, double> binomial_band(std::size_t n, double p, double mass = 0.99);

/// Biased (V-statistic) squared MMD with a Gaussian kernel whose bandwidth is
/// the median pairwise distance of the pooled sample. Rows are samples.
double mmd(const Matrix& a, const Matrix& b);

struct RecoveryStats {
  std::vector<std::optional<double>> r;  // missing for a constant column
  std::vector<double> r2;
};

/// Per-column Pearson r and R^2 = 1 - SS_res / SS_tot of estimates vs truths.
RecoveryStats recovery_stats(const Matrix& theta_true, const Matrix& estimates);

}  // namespace mlsbi
