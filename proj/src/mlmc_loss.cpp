#include "mlsbi/mlmc_loss.hpp"

#include <json.hpp>

#include <stdexcept>

namespace mlsbi {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

struct Mean {
  double value;
  Vector grad;
};

// Mean of log q over a batch (gradient optional).
Mean mean_logpdf(const ConditionalEstimator& est, const EstimatorParams& phi, const TrainingPairs& pairs,
                 bool with_gradients) {
  require(pairs.size() >= 1, "loss: empty batch");
  if (with_gradients) {
    LogDensityBatch r = est.logpdf_grad(phi, pairs.conditions, pairs.targets);
    return {r.values.mean(), std::move(r.grad_phi)};
  }
  return {est.logpdf(phi, pairs.conditions, pairs.targets).mean(), {}};
}

}  // namespace

Task parse_task(const std::string& name) {
  if (name == "nle" || name == "NLE") return Task::nle;
  if (name == "npe" || name == "NPE") return Task::npe;
  throw std::invalid_argument("unknown task '" + name + "'");
}

const char* to_string(Task task) { return task == Task::nle ? "nle" : "npe"; }

TrainingPairs make_pairs(const std::vector<Vector>& thetas, const std::vector<Matrix>& data, Task task,
                         SummaryScheme scheme) {
  require(!thetas.empty() && thetas.size() == data.size(), "make_pairs: size mismatch");
  const Eigen::Index d_theta = thetas[0].size();
  TrainingPairs out;
  if (task == Task::nle) {
    Eigen::Index total = 0;
    for (const auto& x : data) total += x.rows();
    const Eigen::Index d_x = data[0].cols();
    out.conditions.resize(d_theta, total);
    out.targets.resize(d_x, total);
    Eigen::Index col = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      for (Eigen::Index j = 0; j < data[i].rows(); ++j, ++col) {
        out.conditions.col(col) = thetas[i];
        out.targets.col(col) = data[i].row(j).transpose();
      }
    }
  } else {
    const Vector first = summarize(data[0], scheme);
    out.conditions.resize(first.size(), static_cast<Eigen::Index>(data.size()));
    out.targets.resize(d_theta, static_cast<Eigen::Index>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      out.conditions.col(c) = i == 0 ? first : summarize(data[i], scheme);
      out.targets.col(c) = thetas[i];
    }
  }
  return out;
}

LevelData prepare_level(const LevelBatch& batch, Task task, SummaryScheme scheme) {
  require(batch.n() >= 1, "prepare_level: empty batch");
  std::vector<Vector> thetas;
  std::vector<Matrix> hi, lo;
  thetas.reserve(batch.n());
  hi.reserve(batch.n());
  for (const auto& s : batch.samples) {
    thetas.push_back(s.theta);
    hi.push_back(s.x_hi);
    if (s.x_lo) lo.push_back(*s.x_lo);
  }
  require(lo.empty() || lo.size() == hi.size(), "prepare_level: partially coupled batch");
  LevelData out;
  out.level = batch.level;
  out.hi = make_pairs(thetas, hi, task, scheme);
  if (!lo.empty()) out.lo = make_pairs(thetas, lo, task, scheme);
  return out;
}

Vector LossReport::grad_h(std::size_t level) const {
  require(has_gradients(), "loss report carries no gradients");
  if (level == 0) return grad_f_plus[0];
  return grad_f_plus[level] + grad_f_minus[level - 1];
}

Vector LossReport::grad_total() const {
  require(has_gradients(), "loss report carries no gradients");
  Vector g = grad_f_plus[0];
  for (std::size_t l = 1; l < grad_f_plus.size(); ++l) g += grad_f_plus[l] + grad_f_minus[l - 1];
  return g;
}

std::string LossReport::to_json() const {
  nlohmann::json j;
  j["total"] = total;
  j["h"] = h;
  j["f_plus"] = f_plus;
  j["f_minus"] = f_minus;
  if (has_gradients()) {
    std::vector<double> np, nm;
    for (const auto& g : grad_f_plus) np.push_back(g.norm());
    for (const auto& g : grad_f_minus) nm.push_back(g.norm());
    j["grad_norm_f_plus"] = np;
    j["grad_norm_f_minus"] = nm;
  }
  return j.dump();
}

LossReport mc_loss(const ConditionalEstimator& est, const EstimatorParams& phi, const LevelData& batch,
                   bool with_gradients) {
  require(batch.hi.size() >= 1, "mc_loss: empty batch");
  Mean m = mean_logpdf(est, phi, batch.hi, with_gradients);
  LossReport r;
  r.total = -m.value;
  r.h = {r.total};
  r.f_plus = {r.total};
  if (with_gradients) r.grad_f_plus = {-m.grad};
  return r;
}

LossReport mlmc_loss(const ConditionalEstimator& est, const EstimatorParams& phi,
                     const std::vector<LevelData>& batches, bool with_gradients) {
  require(!batches.empty(), "mlmc_loss: no level batches");
  const std::size_t L = batches.size() - 1;
  LossReport r;
  r.h.resize(L + 1);
  r.f_plus.resize(L + 1);
  r.f_minus.resize(L);
  if (with_gradients) {
    r.grad_f_plus.resize(L + 1);
    r.grad_f_minus.resize(L);
  }
  for (std::size_t l = 0; l <= L; ++l) {
    const LevelData& b = batches[l];
    require(b.level == l, "mlmc_loss: batch for level " + std::to_string(l) + " missing");
    require(b.hi.size() >= 1, "mlmc_loss: empty batch at level " + std::to_string(l));
    Mean plus = mean_logpdf(est, phi, b.hi, with_gradients);
    r.f_plus[l] = -plus.value;
    if (with_gradients) r.grad_f_plus[l] = -plus.grad;
    if (l >= 1) {
      require(b.lo.has_value(), "mlmc_loss: level " + std::to_string(l) + " batch lacks lower-level outputs");
      require(b.lo->size() == b.hi.size(), "mlmc_loss: coupled batch size mismatch");
      Mean minus = mean_logpdf(est, phi, *b.lo, with_gradients);
      r.f_minus[l - 1] = minus.value;
      if (with_gradients) r.grad_f_minus[l - 1] = std::move(minus.grad);
    }
  }
  r.h[0] = r.f_plus[0];
  r.total = r.h[0];
  for (std::size_t l = 1; l <= L; ++l) {
    r.h[l] = r.f_plus[l] + r.f_minus[l - 1];
    r.total += r.h[l];
  }
  return r;
}

Vector level_terms(const ConditionalEstimator& est, const EstimatorParams& phi, const LevelData& pilot) {
  Vector f = -est.logpdf(phi, pilot.hi.conditions, pilot.hi.targets);
  if (pilot.level == 0) return f;
  require(pilot.lo.has_value(), "level_terms: level >= 1 pilot lacks lower-level outputs");
  return f + est.logpdf(phi, pilot.lo->conditions, pilot.lo->targets);
}

LevelVariance level_variance(const ConditionalEstimator& est, const EstimatorParams& phi, const LevelData& pilot) {
  require(pilot.hi.size() >= 2, "level_variance: pilot needs at least two samples");
  const Vector t = level_terms(est, phi, pilot);
  const double mean = t.mean();
  const double var = (t.array() - mean).square().sum() / static_cast<double>(t.size() - 1);
  return {var, var / static_cast<double>(t.size())};
}

}  // namespace mlsbi
