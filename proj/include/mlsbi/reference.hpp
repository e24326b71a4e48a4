#pragma once

// Reference posteriors: a large-n MC-trained NPE used as the KLD reference,
// and random-walk Metropolis sampling of NLE posteriors.

#include "mlsbi/mlmc_loss.hpp"
#include "mlsbi/simulators.hpp"
#include "mlsbi/trainer.hpp"

#include <functional>
#include <memory>

namespace mlsbi {

struct FittedEstimator {
  std::shared_ptr<MixtureDensityNetwork> net;
  EstimatorParams params;
  TrainingLog log;
};

struct ReferenceOptions {
  std::size_t n = 10000;
  std::size_t m = 1;
  SummaryScheme scheme = SummaryScheme::identity;
  MdnConfig mdn;  // condition / target dims are filled in
  TrainConfig train;
};

/// MC-trained NPE on top-fidelity simulations.
FittedEstimator reference_npe(const Simulator& sim, const ReferenceOptions& opts, const SeedKey& key);

/// (1/n) sum_s [log q_ref(theta_s | c) - log q_target(theta_s | c)] with
/// theta_s ~ q_ref( . | c). +inf when the target density is not finite at a draw.
double kld_to_reference(const ConditionalEstimator& target, const EstimatorParams& target_phi,
                        const ConditionalEstimator& reference, const EstimatorParams& reference_phi,
                        const Vector& condition, std::size_t n_draws, const SeedKey& key);

struct McmcOptions {
  std::size_t n_chains = 4;
  std::size_t n_steps = 1000;  // kept draws per chain
  std::size_t burn_in = 1000;
  std::size_t adapt_every = 50;
  double initial_step = 0.1;   // proposal sd as a fraction of the box width
  std::size_t thin = 1;
};

struct McmcResult {
  Matrix samples;  // (n_chains * n_steps) x d, chain-major
  std::vector<double> acceptance;
  std::vector<double> step;
};

class SamplerStuck : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using LogTarget = std::function<double(const Vector&)>;

/// Random-walk Metropolis on log_likelihood(theta) + prior log-density inside
/// the prior box. The step is tuned during burn-in towards acceptance in
/// [0.2, 0.5]. Throws SamplerStuck if a chain accepts nothing after burn-in.
McmcResult nle_posterior_sample(const LogTarget& log_likelihood, const PriorBox& prior, const McmcOptions& opts,
                                const SeedKey& key);

/// sum_j log q(x_j | theta) over the rows of `observations`.
LogTarget nle_log_likelihood(const ConditionalEstimator& est, const EstimatorParams& phi, const Matrix& observations);

}  // namespace mlsbi
