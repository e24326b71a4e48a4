#include "mlsbi/allocation.hpp"

#include <cmath>
#include <string>

namespace mlsbi {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// Minimises sum a_l / n_l subject to sum n_l c_l = budget and n_l >= 1.
// Levels whose unconstrained optimum falls below one sample are pinned at one
// and the remaining budget is re-split among the others.
AllocationPlan allocate(const CostModel& costs, const std::vector<double>& weights_sq,
                        const std::vector<double>& kernel_costs, double budget) {
  costs.validate();
  const std::size_t L1 = costs.levels();
  require(weights_sq.size() == L1 && kernel_costs.size() == L1, "allocation: one value per level expected");
  require(budget > 0.0 && std::isfinite(budget), "allocation: budget must be positive");

  double min_cost = 0.0;
  for (std::size_t l = 0; l < L1; ++l) min_cost += costs.effective_cost(l);
  if (L1 >= 2) {
    const double top_pair = costs.unit_costs[L1 - 1] + costs.unit_costs[L1 - 2];
    if (!(budget > top_pair))
      throw InfeasibleBudget("budget " + std::to_string(budget) + " cannot afford one top-level coupled sample (" +
                             std::to_string(top_pair) + ")");
  }
  if (budget < min_cost)
    throw InfeasibleBudget("budget " + std::to_string(budget) + " is below one sample per level (" +
                           std::to_string(min_cost) + ")");

  std::vector<double> w(L1);
  for (std::size_t l = 0; l < L1; ++l) {
    require(weights_sq[l] >= 0.0 && std::isfinite(weights_sq[l]), "allocation: weights must be finite and >= 0");
    w[l] = std::sqrt(weights_sq[l] / kernel_costs[l]);
  }

  std::vector<bool> pinned(L1, false);
  std::vector<double> n(L1, 1.0);
  for (;;) {
    double free_budget = budget, denom = 0.0;
    for (std::size_t l = 0; l < L1; ++l) {
      if (pinned[l]) free_budget -= costs.effective_cost(l);
      else denom += w[l] * costs.effective_cost(l);
    }
    const double lambda = denom > 0.0 ? free_budget / denom : 0.0;
    bool changed = false;
    for (std::size_t l = 0; l < L1; ++l) {
      if (pinned[l]) continue;
      n[l] = lambda * w[l];
      if (n[l] < 1.0) {
        pinned[l] = true;
        n[l] = 1.0;
        changed = true;
      }
    }
    if (!changed) break;
  }

  AllocationPlan plan;
  plan.budget = budget;
  plan.n_continuous = n;
  plan.n.resize(L1);
  for (std::size_t l = 0; l < L1; ++l)
    plan.n[l] = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(n[l] + 1e-9)));
  double spent = cost_of(plan.n, costs);
  // Flooring can only shrink the cost, except where the 1e-9 guard rounded up.
  for (std::size_t l = L1; spent > budget && l-- > 0;) {
    while (plan.n[l] > 1 && spent > budget) {
      --plan.n[l];
      spent -= costs.effective_cost(l);
    }
  }
  // Leftover goes to the cheapest level.
  std::size_t cheapest = 0;
  for (std::size_t l = 1; l < L1; ++l)
    if (costs.effective_cost(l) < costs.effective_cost(cheapest)) cheapest = l;
  const double c = costs.effective_cost(cheapest);
  const auto extra = static_cast<std::size_t>(std::floor((budget - spent) / c));
  plan.n[cheapest] += extra;
  plan.achieved_cost = cost_of(plan.n, costs);
  return plan;
}

}  // namespace

void CostModel::validate() const {
  require(!unit_costs.empty(), "cost model: at least one level required");
  for (std::size_t l = 0; l < unit_costs.size(); ++l) {
    require(unit_costs[l] > 0.0 && std::isfinite(unit_costs[l]), "cost model: costs must be positive");
    if (l > 0) require(unit_costs[l] > unit_costs[l - 1], "cost model: costs must strictly increase");
  }
}

double CostModel::effective_cost(std::size_t level) const {
  require(level < unit_costs.size(), "cost model: level out of range");
  return level == 0 ? unit_costs[0] : unit_costs[level] + unit_costs[level - 1];
}

AllocationPlan plan_waterfill(const CostModel& costs, const std::vector<double>& norms, double budget,
                             CostKernel kernel) {
  costs.validate();
  const std::size_t L1 = costs.levels();
  require(norms.size() == L1, "plan_waterfill: one norm per level expected");
  std::vector<double> a(L1), kc(L1);
  for (std::size_t l = 0; l < L1; ++l) {
    require(norms[l] >= 0.0, "plan_waterfill: norms must be >= 0");
    a[l] = l == 0 ? std::pow(norms[0], 4) + 1.0 : norms[l] * norms[l] + 1.0;
    if (l == 0) {
      kc[l] = costs.unit_costs[0];
    } else if (kernel == CostKernel::adjacent_lower) {
      kc[l] = costs.unit_costs[l] + costs.unit_costs[l - 1];
    } else {
      kc[l] = costs.unit_costs[l] + costs.unit_costs[std::min(l + 1, L1 - 1)];
    }
  }
  return allocate(costs, a, kc, budget);
}

AllocationPlan plan_pilot(const CostModel& costs, const std::vector<double>& pilot_variances, double budget) {
  costs.validate();
  std::vector<double> kc(costs.levels());
  for (std::size_t l = 0; l < costs.levels(); ++l) kc[l] = costs.effective_cost(l);
  return allocate(costs, pilot_variances, kc, budget);
}

double cost_of(const std::vector<std::size_t>& n, const CostModel& costs) {
  require(n.size() == costs.levels(), "cost_of: plan and cost model lengths differ");
  double total = 0.0;
  for (std::size_t l = 0; l < n.size(); ++l) total += static_cast<double>(n[l]) * costs.effective_cost(l);
  return total;
}

double cost_of(const AllocationPlan& plan, const CostModel& costs) { return cost_of(plan.n, costs); }

double mc_cost(std::size_t n, const CostModel& costs) {
  require(costs.levels() >= 1, "mc_cost: empty cost model");
  return static_cast<double>(n) * costs.unit_costs.back();
}

std::vector<std::size_t> matched_budget_sizes(double budget, const CostModel& costs) {
  costs.validate();
  std::vector<std::size_t> out;
  for (double c : costs.unit_costs) out.push_back(static_cast<std::size_t>(std::floor(budget / c + 1e-9)));
  return out;
}

double variance_bound(const std::vector<double>& n, const std::vector<double>& norms) {
  require(n.size() == norms.size(), "variance_bound: length mismatch");
  double v = 0.0;
  for (std::size_t l = 0; l < n.size(); ++l) {
    const double a = l == 0 ? std::pow(norms[0], 4) + 1.0 : norms[l] * norms[l] + 1.0;
    v += a / n[l];
  }
  return v;
}

}  // namespace mlsbi
