#pragma once

// Per-level sample-size planning under a simulation budget.
//
// The cost of an MLMC dataset is n_0 C_0 + sum_{l>=1} n_l (C_l + C_{l-1}):
// a level-l sample runs both generator l and generator l-1.

#include <stdexcept>
#include <vector>

namespace mlsbi {

struct CostModel {
  std::vector<double> unit_costs;  // C_0..C_L

  /// Throws std::invalid_argument unless every C_l > 0 and C_l < C_{l+1}.
  void validate() const;
  std::size_t levels() const { return unit_costs.size(); }
  /// Cost of one level-l sample: C_0 at level 0, C_l + C_{l-1} above.
  double effective_cost(std::size_t level) const;
};

struct AllocationPlan {
  std::vector<std::size_t> n;        // n_0..n_L after flooring
  std::vector<double> n_continuous;  // pre-floor optimum
  double budget = 0.0;
  double achieved_cost = 0.0;
};

class InfeasibleBudget : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Which cost pairs enter the closed-form weights for l >= 1.
enum class CostKernel {
  adjacent_lower,  // sqrt(C_l + C_{l-1}), consistent with the cost functional
  adjacent_upper,  // sqrt(C_l + C_{l+1}), with C_{L+1} taken as C_L
};

/// Closed-form allocation minimising sum_l a_l / n_l subject to the budget,
/// where a_0 = norms[0]^4 + 1 and a_l = norms[l]^2 + 1.
AllocationPlan plan_waterfill(const CostModel& costs, const std::vector<double>& norms, double budget,
                             CostKernel kernel = CostKernel::adjacent_lower);

/// Allocation n_l proportional to sqrt(V_l / c_l) from pilot variances.
AllocationPlan plan_pilot(const CostModel& costs, const std::vector<double>& pilot_variances, double budget);

double cost_of(const std::vector<std::size_t>& n, const CostModel& costs);
double cost_of(const AllocationPlan& plan, const CostModel& costs);

/// Cost of a single-level MC dataset of n samples at the top level.
double mc_cost(std::size_t n, const CostModel& costs);

/// Single-fidelity sample sizes that exhaust `budget` at each level:
/// floor(budget / C_l).
std::vector<std::size_t> matched_budget_sizes(double budget, const CostModel& costs);

/// sum_l a_l / n_l, the variance bound the closed form minimises (unit constants).
double variance_bound(const std::vector<double>& n, const std::vector<double>& norms);

}  // namespace mlsbi
