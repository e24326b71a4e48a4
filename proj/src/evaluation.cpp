#include "mlsbi/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mlsbi {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

std::vector<double> eval_on(const LogDensity1D& f, const EvalGrid& grid) {
  std::vector<double> out(grid.n_points);
  for (std::size_t i = 0; i < grid.n_points; ++i) out[i] = f(grid.point(i));
  return out;
}

double trapezoid(const std::vector<double>& y, double h) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (i == 0 || i + 1 == y.size()) ? 0.5 * y[i] : y[i];
  return s * h;
}

// Type-7 quantile of sorted data.
double quantile_sorted(const std::vector<double>& v, double p) {
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double log_binom_pmf(std::size_t n, std::size_t k, double p) {
  const double nn = static_cast<double>(n), kk = static_cast<double>(k);
  double lp = std::lgamma(nn + 1) - std::lgamma(kk + 1) - std::lgamma(nn - kk + 1);
  lp += k > 0 ? kk * std::log(p) : 0.0;
  lp += k < n ? (nn - kk) * std::log1p(-p) : 0.0;
  return lp;
}

}  // namespace

void EvalGrid::validate() const {
  require(lo < hi, "grid: lo must be below hi");
  require(n_points >= 2, "grid: need at least two points");
}

double EvalGrid::point(std::size_t i) const {
  if (i + 1 == n_points) return hi;
  return lo + step() * static_cast<double>(i);
}

std::vector<double> EvalGrid::points() const {
  std::vector<double> x(n_points);
  for (std::size_t i = 0; i < n_points; ++i) x[i] = point(i);
  return x;
}

double grid_kld(const LogDensity1D& exact_logpdf, const LogDensity1D& approx_logpdf, const EvalGrid& grid) {
  grid.validate();
  return grid_kld(eval_on(exact_logpdf, grid), eval_on(approx_logpdf, grid), grid);
}

double grid_kld(const std::vector<double>& log_p, const std::vector<double>& log_q, const EvalGrid& grid) {
  grid.validate();
  require(log_p.size() == grid.n_points && log_q.size() == grid.n_points, "grid_kld: length mismatch");
  const double h = grid.step();
  std::vector<double> p(log_p.size()), q(log_q.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::isnan(log_p[i]) ? 0.0 : std::exp(log_p[i]);
    q[i] = std::isnan(log_q[i]) ? 0.0 : std::exp(log_q[i]);
  }
  const double zp = trapezoid(p, h), zq = trapezoid(q, h);
  require(zp > 0.0 && std::isfinite(zp), "grid_kld: reference density vanishes on the grid");
  if (!(zq > 0.0)) return kInf;
  const double log_zp = std::log(zp), log_zq = std::log(zq);
  std::vector<double> integrand(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (!(log_q[i] > -kInf)) return kInf;
    integrand[i] = (p[i] / zp) * ((log_p[i] - log_zp) - (log_q[i] - log_zq));
  }
  return trapezoid(integrand, h);
}

double grid_ise(const LogDensity1D& exact_logpdf, const LogDensity1D& approx_logpdf, const EvalGrid& grid) {
  grid.validate();
  return grid_ise(eval_on(exact_logpdf, grid), eval_on(approx_logpdf, grid));
}

double grid_ise(const std::vector<double>& log_p, const std::vector<double>& log_q) {
  require(log_p.size() == log_q.size(), "grid_ise: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < log_p.size(); ++i) {
    const double d = std::exp(log_p[i]) - std::exp(log_q[i]);
    s += d * d;
  }
  return s;
}

double nlpd(const std::function<double(const Vector&)>& posterior_logpdf, const Vector& theta_true) {
  return -posterior_logpdf(theta_true);
}

RobustSummary robust_summary(const std::vector<double>& values) {
  std::vector<double> v;
  v.reserve(values.size());
  for (double x : values)
    if (std::isfinite(x)) v.push_back(x);
  if (v.empty()) throw std::invalid_argument("robust_summary: no finite values");
  std::sort(v.begin(), v.end());
  RobustSummary s;
  s.median = quantile_sorted(v, 0.5);
  s.q25 = quantile_sorted(v, 0.25);
  s.q75 = quantile_sorted(v, 0.75);
  s.n_used = v.size();
  s.n_excluded = values.size() - v.size();
  return s;
}

std::vector<double> credibility_grid(std::size_t n) {
  require(n >= 2, "credibility_grid: need at least two levels");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(i) / static_cast<double>(n - 1);
  return out;
}

std::vector<bool> hpd_covered(const Vector& draw_logpdf, double true_logpdf, const std::vector<double>& levels) {
  const auto n = static_cast<std::size_t>(draw_logpdf.size());
  if (n < 10) throw std::invalid_argument("coverage: at least 10 posterior draws required");
  std::vector<double> sorted(draw_logpdf.data(), draw_logpdf.data() + n);
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  std::vector<bool> out(levels.size());
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const double c = levels[i];
    if (c <= 0.0) {
      out[i] = false;
    } else if (c >= 1.0) {
      out[i] = true;
    } else {
      const auto k = static_cast<std::size_t>(std::ceil(c * static_cast<double>(n) - 1e-9));
      out[i] = true_logpdf >= sorted[std::max<std::size_t>(k, 1) - 1];
    }
  }
  return out;
}

CoverageAccumulator::CoverageAccumulator(std::vector<double> levels)
    : levels_(std::move(levels)), hits_(levels_.size(), 0) {}

void CoverageAccumulator::add(const std::vector<bool>& covered) {
  require(covered.size() == levels_.size(), "coverage: indicator length mismatch");
  for (std::size_t i = 0; i < covered.size(); ++i) hits_[i] += covered[i] ? 1 : 0;
  ++n_;
}

CoverageCurve CoverageAccumulator::curve() const {
  CoverageCurve c;
  c.levels = levels_;
  c.n_datasets = n_;
  c.empirical.resize(levels_.size(), 0.0);
  if (n_ > 0)
    for (std::size_t i = 0; i < hits_.size(); ++i)
      c.empirical[i] = static_cast<double>(hits_[i]) / static_cast<double>(n_);
  return c;
}

std::pair<double, double> binomial_band(std::size_t n, double p, double mass) {
  require(n >= 1, "binomial_band: n must be positive");
  if (p <= 0.0) return {0.0, 0.0};
  if (p >= 1.0) return {1.0, 1.0};
  const double tail = 0.5 * (1.0 - mass);
  std::vector<double> pmf(n + 1);
  for (std::size_t k = 0; k <= n; ++k) pmf[k] = std::exp(log_binom_pmf(n, k, p));
  std::size_t lo = 0;
  double cum = pmf[0];
  while (cum < tail && lo < n) cum += pmf[++lo];
  std::size_t hi = n;
  cum = pmf[n];
  while (cum < tail && hi > 0) cum += pmf[--hi];
  const double nn = static_cast<double>(n);
  return {static_cast<double>(lo) / nn, static_cast<double>(hi) / nn};
}

double mmd(const Matrix& a, const Matrix& b) {
  require(a.rows() > 0 && b.rows() > 0, "mmd: samples must be non-empty");
  require(a.cols() == b.cols(), "mmd: dimension mismatch");
  Matrix pooled(a.rows() + b.rows(), a.cols());
  pooled << a, b;
  const Eigen::Index n = pooled.rows();
  const Vector sq = pooled.rowwise().squaredNorm();
  Matrix d2 = (sq.replicate(1, n) + sq.transpose().replicate(n, 1) - 2.0 * pooled * pooled.transpose())
                  .cwiseMax(0.0);

  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = j + 1; i < n; ++i) dists.push_back(std::sqrt(d2(i, j)));
  double h = 1.0;
  if (!dists.empty()) {
    auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
    std::nth_element(dists.begin(), mid, dists.end());
    h = *mid;
    if (dists.size() % 2 == 0) h = 0.5 * (h + *std::max_element(dists.begin(), mid));
  }
  if (!(h > 0.0)) h = 1.0;

  const Matrix k = (-d2 / (2.0 * h * h)).array().exp().matrix();
  const Eigen::Index na = a.rows(), nb = b.rows();
  const double kaa = k.topLeftCorner(na, na).sum() / static_cast<double>(na * na);
  const double kbb = k.bottomRightCorner(nb, nb).sum() / static_cast<double>(nb * nb);
  const double kab = k.topRightCorner(na, nb).sum() / static_cast<double>(na * nb);
  return std::max(0.0, kaa + kbb - 2.0 * kab);
}

RecoveryStats recovery_stats(const Matrix& theta_true, const Matrix& estimates) {
  require(theta_true.rows() == estimates.rows() && theta_true.cols() == estimates.cols(),
          "recovery_stats: shape mismatch");
  require(theta_true.rows() >= 2, "recovery_stats: need at least two rows");
  RecoveryStats out;
  for (Eigen::Index j = 0; j < theta_true.cols(); ++j) {
    const Vector t = theta_true.col(j), e = estimates.col(j);
    const Vector tc = t.array() - t.mean(), ec = e.array() - e.mean();
    const double stt = tc.squaredNorm(), see = ec.squaredNorm();
    if (stt > 0.0 && see > 0.0) out.r.push_back(tc.dot(ec) / std::sqrt(stt * see));
    else out.r.push_back(std::nullopt);
    const double ss_res = (t - e).squaredNorm();
    out.r2.push_back(stt > 0.0 ? 1.0 - ss_res / stt : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

}  // namespace mlsbi
