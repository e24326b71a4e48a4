#include "mlsbi/reference.hpp"

#include "mlsbi/parallel.hpp"

#include <cmath>
#include <limits>

namespace mlsbi {

FittedEstimator reference_npe(const Simulator& sim, const ReferenceOptions& opts, const SeedKey& key) {
  const std::size_t top = sim.top_level();
  LevelBatch batch{top, simulate_level(sim, top, opts.n, opts.m, derive_stream(key, 0))};
  // Only the top generator matters for a reference; drop the coupled lower run.
  for (auto& s : batch.samples) s.x_lo.reset();
  LevelData data = prepare_level(batch, Task::npe, opts.scheme);
  data.level = 0;

  MdnConfig cfg = opts.mdn;
  cfg.condition_dim = static_cast<std::size_t>(data.hi.conditions.rows());
  cfg.target_dim = static_cast<std::size_t>(data.hi.targets.rows());
  FittedEstimator out;
  out.net = std::make_shared<MixtureDensityNetwork>(cfg, Standardizer::fit(data.hi.conditions, data.hi.targets));
  TrainResult r = train(*out.net, out.net->init(derive_stream(key, 1)), {data}, opts.train);
  out.params = std::move(r.params);
  out.log = std::move(r.log);
  return out;
}

double kld_to_reference(const ConditionalEstimator& target, const EstimatorParams& target_phi,
                        const ConditionalEstimator& reference, const EstimatorParams& reference_phi,
                        const Vector& condition, std::size_t n_draws, const SeedKey& key) {
  if (n_draws == 0) throw std::invalid_argument("kld_to_reference: n_draws must be positive");
  const Matrix draws = reference.sample(reference_phi, condition, n_draws, key);
  const Matrix cond = condition.replicate(1, static_cast<Eigen::Index>(n_draws));
  const Vector lr = reference.logpdf(reference_phi, cond, draws);
  const Vector lt = target.logpdf(target_phi, cond, draws);
  if (!lt.allFinite()) return std::numeric_limits<double>::infinity();
  return (lr - lt).mean();
}

LogTarget nle_log_likelihood(const ConditionalEstimator& est, const EstimatorParams& phi, const Matrix& observations) {
  const Matrix targets = observations.transpose();
  return [&est, &phi, targets](const Vector& theta) {
    const Matrix cond = theta.replicate(1, targets.cols());
    return est.logpdf(phi, cond, targets).sum();
  };
}

McmcResult nle_posterior_sample(const LogTarget& log_likelihood, const PriorBox& prior, const McmcOptions& opts,
                                const SeedKey& key) {
  if (opts.n_chains == 0 || opts.n_steps == 0) throw std::invalid_argument("mcmc: chains and steps must be positive");
  if (opts.thin == 0 || opts.adapt_every == 0) throw std::invalid_argument("mcmc: thin and adapt_every must be positive");
  const Eigen::Index d = prior.dim();
  const Vector width = prior.upper - prior.lower;
  McmcResult res;
  res.samples.resize(static_cast<Eigen::Index>(opts.n_chains * opts.n_steps), d);
  res.acceptance.assign(opts.n_chains, 0.0);
  res.step.assign(opts.n_chains, opts.initial_step);

  auto log_target = [&](const Vector& theta) {
    const double lp = prior.log_density(theta);
    if (!std::isfinite(lp)) return -std::numeric_limits<double>::infinity();
    const double ll = log_likelihood(theta);
    return std::isnan(ll) ? -std::numeric_limits<double>::infinity() : ll + lp;
  };

  parallel_for(opts.n_chains, [&](std::size_t c) {
    RandomStream rs(derive_stream(key, c));
    Vector x = prior.sample(rs);
    double lx = log_target(x);
    for (int tries = 0; !std::isfinite(lx) && tries < 1000; ++tries) {
      x = prior.sample(rs);
      lx = log_target(x);
    }
    double step = opts.initial_step;
    std::size_t window_acc = 0, window_n = 0;

    auto propose = [&]() {
      Vector y = x;
      for (Eigen::Index j = 0; j < d; ++j) y[j] += step * width[j] * rs.normal();
      const double ly = log_target(y);
      if (std::isfinite(ly) && std::log(rs.uniform()) < ly - lx) {
        x = std::move(y);
        lx = ly;
        return true;
      }
      return false;
    };

    for (std::size_t t = 0; t < opts.burn_in; ++t) {
      window_acc += propose() ? 1 : 0;
      if (++window_n == opts.adapt_every) {
        const double rate = static_cast<double>(window_acc) / static_cast<double>(window_n);
        if (rate < 0.2) step *= 0.7;
        else if (rate > 0.5) step *= 1.3;
        step = std::min(step, 1.0);
        window_acc = window_n = 0;
      }
    }

    std::size_t accepted = 0, total = 0;
    for (std::size_t t = 0; t < opts.n_steps; ++t) {
      for (std::size_t k = 0; k < opts.thin; ++k, ++total) accepted += propose() ? 1 : 0;
      res.samples.row(static_cast<Eigen::Index>(c * opts.n_steps + t)) = x.transpose();
    }
    res.acceptance[c] = static_cast<double>(accepted) / static_cast<double>(total);
    res.step[c] = step;
    if (accepted == 0)
      throw SamplerStuck("mcmc: chain " + std::to_string(c) + " rejected every proposal after adaptation");
  });
  return res;
}

}  // namespace mlsbi
