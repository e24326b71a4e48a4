#include "mlsbi/trainer.hpp"

#include <json.hpp>

#include <cmath>

namespace mlsbi {

AdamState AdamState::zeros(std::size_t n, double lr) {
  AdamState s;
  s.m1 = Vector::Zero(static_cast<Eigen::Index>(n));
  s.m2 = Vector::Zero(static_cast<Eigen::Index>(n));
  s.lr = lr;
  return s;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("train: weight decay must be >= 0");
}

Vector adjust_gradients(const Vector& g_h0, const std::vector<Vector>& g_plus, std::vector<Vector> g_minus,
                        double eps, AdjustInfo* info) {
  if (g_plus.size() != g_minus.size())
    throw std::invalid_argument("adjust_gradients: need one g_minus per g_plus");
  for (std::size_t l = 0; l < g_plus.size(); ++l)
    if (g_plus[l].size() != g_h0.size() || g_minus[l].size() != g_h0.size())
      throw std::invalid_argument("adjust_gradients: gradient length mismatch");

  for (std::size_t l = 0; l < g_plus.size(); ++l)
    g_minus[l] *= g_plus[l].norm() / (g_minus[l].norm() + eps);

  Vector g_c = Vector::Zero(g_h0.size());
  for (std::size_t l = 0; l < g_plus.size(); ++l) g_c += g_plus[l] + g_minus[l];

  Vector h0 = g_h0;
  Vector c = g_c;
  const double dot = g_h0.dot(g_c);
  const bool conflict = dot < 0.0;
  if (conflict) {
    // Both projections use the pre-surgery vectors.
    h0 = g_h0 - (dot / g_c.squaredNorm()) * g_c;
    c = g_c - (dot / g_h0.squaredNorm()) * g_h0;
  }
  if (info) {
    info->conflict = conflict;
    info->g_h0 = h0;
    info->g_c = c;
    info->g_c_raw = std::move(g_c);
  }
  return h0 + c;
}

void adam_step(AdamState& s, EstimatorParams& phi, const Vector& grad, double weight_decay) {
  if (grad.size() != phi.values.size() || s.m1.size() != phi.values.size())
    throw std::invalid_argument("adam_step: length mismatch");
  if (!grad.allFinite()) throw TrainingDiverged(static_cast<std::size_t>(s.step), "non-finite gradient");
  const Vector g = weight_decay > 0.0 ? Vector(grad + weight_decay * phi.values) : grad;
  s.step += 1;
  s.m1 = s.beta1 * s.m1 + (1.0 - s.beta1) * g;
  s.m2 = s.beta2 * s.m2 + (1.0 - s.beta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  phi.values.array() -= s.lr * (s.m1.array() / c1) / ((s.m2.array() / c2).sqrt() + s.eps);
}

std::string EpochRecord::to_json() const {
  nlohmann::json j = nlohmann::json::parse(loss.to_json());
  j["epoch"] = epoch;
  j["grad_norm"] = grad_norm;
  j["grad_norm_f_plus"] = grad_norm_f_plus;
  j["grad_norm_f_minus"] = grad_norm_f_minus;
  j["surgery"] = surgery;
  return j.dump();
}

TrainResult train(const ConditionalEstimator& est, EstimatorParams init, const std::vector<LevelData>& batches,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (batches.empty()) throw std::invalid_argument("train: no batches");
  TrainResult result;
  result.params = std::move(init);
  AdamState adam = AdamState::zeros(result.params.size(), config.lr);
  const bool multilevel = batches.size() > 1;
  result.log.epochs.reserve(config.epochs);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    LossReport loss = multilevel ? mlmc_loss(est, result.params, batches) : mc_loss(est, result.params, batches[0]);
    if (!std::isfinite(loss.total))
      throw TrainingDiverged(epoch, "loss became non-finite at epoch " + std::to_string(epoch));

    EpochRecord rec;
    rec.epoch = epoch;
    for (const auto& g : loss.grad_f_plus) rec.grad_norm_f_plus.push_back(g.norm());
    for (const auto& g : loss.grad_f_minus) rec.grad_norm_f_minus.push_back(g.norm());

    Vector grad;
    if (multilevel && config.adjust_gradients) {
      std::vector<Vector> g_plus(loss.grad_f_plus.begin() + 1, loss.grad_f_plus.end());
      AdjustInfo info;
      grad = adjust_gradients(loss.grad_f_plus[0], g_plus, loss.grad_f_minus, config.adjust_eps, &info);
      rec.surgery = info.conflict;
    } else {
      grad = loss.grad_total();
    }
    rec.grad_norm = grad.norm();
    loss.grad_f_plus.clear();
    loss.grad_f_minus.clear();
    rec.loss = std::move(loss);

    try {
      adam_step(adam, result.params, grad, config.weight_decay);
    } catch (const TrainingDiverged&) {
      throw TrainingDiverged(epoch, "non-finite gradient at epoch " + std::to_string(epoch));
    }
    if (on_epoch) on_epoch(rec);
    result.log.epochs.push_back(std::move(rec));
  }
  return result;
}

}  // namespace mlsbi
