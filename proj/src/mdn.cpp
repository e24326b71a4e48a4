#include "mlsbi/mdn.hpp"

#include "mlsbi/parallel.hpp"
#include "mlsbi/special.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mlsbi {

using json = nlohmann::json;

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

// softplus^{-1}(1 - floor): raw scale that yields an initial std of exactly 1.
double unit_scale_bias() { return std::log(std::expm1(1.0 - MixtureDensityNetwork::kSigmaFloor)); }

}  // namespace

// ---- config / params ---------------------------------------------------------

void MdnConfig::validate() const {
  require(condition_dim >= 1, "mdn: condition_dim must be >= 1");
  require(target_dim >= 1, "mdn: target_dim must be >= 1");
  require(n_components >= 1, "mdn: n_components must be >= 1");
  for (auto h : hidden_layers) require(h >= 1, "mdn: hidden layer widths must be >= 1");
  require(activation == "tanh", "mdn: only the tanh activation is supported");
}

const TensorSlot& EstimatorParams::slot(const std::string& name) const {
  for (const auto& s : layout)
    if (s.name == name) return s;
  throw std::invalid_argument("mdn: no tensor named '" + name + "'");
}

Eigen::Map<Matrix> EstimatorParams::tensor(const std::string& name) {
  const auto& s = slot(name);
  return {values.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<const Matrix> EstimatorParams::tensor(const std::string& name) const {
  const auto& s = slot(name);
  return {values.data() + s.offset, s.rows, s.cols};
}

Standardizer Standardizer::identity(std::size_t condition_dim, std::size_t target_dim) {
  const auto dc = static_cast<Eigen::Index>(condition_dim);
  const auto dt = static_cast<Eigen::Index>(target_dim);
  return {Vector::Zero(dc), Vector::Ones(dc), Vector::Zero(dt), Vector::Ones(dt)};
}

Standardizer Standardizer::fit(const Matrix& conditions, const Matrix& targets) {
  require(conditions.cols() >= 1 && conditions.cols() == targets.cols(), "standardizer: batch shape mismatch");
  auto moments = [](const Matrix& x, Vector& shift, Vector& scale) {
    shift = x.rowwise().mean();
    scale.resize(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double var = (x.row(i).array() - shift[i]).square().mean();
      const double sd = std::sqrt(var);
      scale[i] = sd > 1e-12 ? sd : 1.0;
    }
  };
  Standardizer s;
  moments(conditions, s.condition_shift, s.condition_scale);
  moments(targets, s.target_shift, s.target_scale);
  return s;
}

// ---- network -----------------------------------------------------------------

struct MixtureDensityNetwork::Pass {
  std::vector<Matrix> acts;  // acts[0] is the standardised input
  Matrix head;
};

MixtureDensityNetwork::MixtureDensityNetwork(MdnConfig config, Standardizer standardizer)
    : config_(std::move(config)) {
  config_.validate();
  if (standardizer.condition_shift.size() == 0)
    standardizer = Standardizer::identity(config_.condition_dim, config_.target_dim);
  set_standardizer(std::move(standardizer));
}

void MixtureDensityNetwork::set_standardizer(Standardizer s) {
  require(static_cast<std::size_t>(s.condition_shift.size()) == config_.condition_dim &&
              static_cast<std::size_t>(s.condition_scale.size()) == config_.condition_dim &&
              static_cast<std::size_t>(s.target_shift.size()) == config_.target_dim &&
              static_cast<std::size_t>(s.target_scale.size()) == config_.target_dim,
          "mdn: standardizer dimension mismatch");
  require((s.condition_scale.array() > 0).all() && (s.target_scale.array() > 0).all(),
          "mdn: standardizer scales must be positive");
  standardizer_ = std::move(s);
}

EstimatorParams MixtureDensityNetwork::make_layout() const {
  EstimatorParams p;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    p.layout.push_back({std::move(name), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols), offset});
    offset += rows * cols;
  };
  std::size_t fan_in = config_.condition_dim;
  for (std::size_t l = 0; l < config_.hidden_layers.size(); ++l) {
    add("hidden" + std::to_string(l) + ".weight", config_.hidden_layers[l], fan_in);
    add("hidden" + std::to_string(l) + ".bias", config_.hidden_layers[l], 1);
    fan_in = config_.hidden_layers[l];
  }
  add("head.weight", config_.head_dim(), fan_in);
  add("head.bias", config_.head_dim(), 1);
  p.values = Vector::Zero(static_cast<Eigen::Index>(offset));
  return p;
}

EstimatorParams MixtureDensityNetwork::init(const SeedKey& key) const {
  EstimatorParams p = make_layout();
  RandomStream rs(key);
  const auto K = static_cast<Eigen::Index>(config_.n_components);
  const auto D = static_cast<Eigen::Index>(config_.target_dim);
  const std::size_t n_layers = config_.hidden_layers.size() + 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const TensorSlot& w = p.layout[2 * l];
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
    auto W = p.tensor(w.name);
    for (Eigen::Index c = 0; c < W.cols(); ++c)
      for (Eigen::Index r = 0; r < W.rows(); ++r) W(r, c) = rs.uniform(-limit, limit);
  }
  auto head_w = p.tensor("head.weight");
  auto head_b = p.tensor("head.bias");
  head_w.topRows(K).setZero();                 // mixture logits start at zero
  head_w.bottomRows(K * D).setZero();          // scales start input-independent
  head_b.bottomRows(K * D).setConstant(unit_scale_bias());
  return p;
}

void MixtureDensityNetwork::check_inputs(const EstimatorParams& phi, const Matrix& conditions,
                                         const Matrix& targets) const {
  require(phi.layout.size() == 2 * (config_.hidden_layers.size() + 1), "mdn: parameter layout mismatch");
  require(static_cast<std::size_t>(conditions.rows()) == config_.condition_dim, "mdn: condition dimension mismatch");
  require(static_cast<std::size_t>(targets.rows()) == config_.target_dim, "mdn: target dimension mismatch");
  require(conditions.cols() == targets.cols(), "mdn: batch size mismatch");
  require(conditions.cols() >= 1, "mdn: empty batch");
  require(all_finite(conditions) && all_finite(targets), "mdn: non-finite input");
}

void MixtureDensityNetwork::forward(const EstimatorParams& phi, const Matrix& x, Pass& pass) const {
  const std::size_t H = config_.hidden_layers.size();
  pass.acts.resize(H + 1);
  pass.acts[0] = x;
  for (std::size_t l = 0; l < H; ++l) {
    const auto& ws = phi.layout[2 * l];
    const auto& bs = phi.layout[2 * l + 1];
    Eigen::Map<const Matrix> W(phi.values.data() + ws.offset, ws.rows, ws.cols);
    Eigen::Map<const Vector> b(phi.values.data() + bs.offset, bs.rows);
    pass.acts[l + 1].noalias() = W * pass.acts[l];
    pass.acts[l + 1].colwise() += b;
    pass.acts[l + 1] = pass.acts[l + 1].array().tanh();
  }
  const auto& ws = phi.layout[2 * H];
  const auto& bs = phi.layout[2 * H + 1];
  Eigen::Map<const Matrix> W(phi.values.data() + ws.offset, ws.rows, ws.cols);
  Eigen::Map<const Vector> b(phi.values.data() + bs.offset, bs.rows);
  pass.head.noalias() = W * pass.acts[H];
  pass.head.colwise() += b;
}

double MixtureDensityNetwork::chunk_eval(const EstimatorParams& phi, const Matrix& x, const Matrix& y,
                                         Vector* values, Eigen::Index value_offset, Vector* grad,
                                         double grad_scale) const {
  Pass pass;
  forward(phi, x, pass);
  const auto K = static_cast<Eigen::Index>(config_.n_components);
  const auto D = static_cast<Eigen::Index>(config_.target_dim);
  const Eigen::Index B = x.cols();
  const double log_jac = standardizer_.log_target_jacobian();
  Matrix d_head;
  if (grad) d_head.resize(pass.head.rows(), B);

  std::vector<double> log_w(static_cast<std::size_t>(K)), comp(static_cast<std::size_t>(K));
  double total = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const double* o = pass.head.col(b).data();
    double max_logit = o[0];
    for (Eigen::Index k = 1; k < K; ++k) max_logit = std::max(max_logit, o[k]);
    double z_logit = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) z_logit += std::exp(o[k] - max_logit);
    const double lse_logit = max_logit + std::log(z_logit);
    double max_comp = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < K; ++k) {
      log_w[k] = o[k] - lse_logit;
      double c = log_w[k];
      for (Eigen::Index j = 0; j < D; ++j) {
        const double mean = o[K + k * D + j];
        const double sd = softplus(o[K + K * D + k * D + j]) + kSigmaFloor;
        const double z = (y(j, b) - mean) / sd;
        c += -0.5 * z * z - std::log(sd) - kLogSqrt2Pi;
      }
      comp[k] = c;
      max_comp = std::max(max_comp, c);
    }
    double sum = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) sum += std::exp(comp[k] - max_comp);
    const double ll = max_comp + std::log(sum);
    total += ll;
    if (values) (*values)[value_offset + b] = ll - log_jac;
    if (grad) {
      double* d = d_head.col(b).data();
      for (Eigen::Index k = 0; k < K; ++k) {
        const double r = std::exp(comp[k] - ll);
        d[k] = (r - std::exp(log_w[k])) * grad_scale;
        for (Eigen::Index j = 0; j < D; ++j) {
          const double mean = o[K + k * D + j];
          const double raw = o[K + K * D + k * D + j];
          const double sd = softplus(raw) + kSigmaFloor;
          const double z = (y(j, b) - mean) / sd;
          d[K + k * D + j] = r * z / sd * grad_scale;
          d[K + K * D + k * D + j] = r * (z * z - 1.0) / sd * sigmoid(raw) * grad_scale;
        }
      }
    }
  }

  if (grad) {
    const std::size_t H = config_.hidden_layers.size();
    Matrix delta = std::move(d_head);
    for (std::size_t l = H + 1; l-- > 0;) {
      const auto& ws = phi.layout[2 * l];
      const auto& bs = phi.layout[2 * l + 1];
      Eigen::Map<const Matrix> W(phi.values.data() + ws.offset, ws.rows, ws.cols);
      Eigen::Map<Matrix> dW(grad->data() + ws.offset, ws.rows, ws.cols);
      Eigen::Map<Vector> db(grad->data() + bs.offset, bs.rows);
      dW.noalias() += delta * pass.acts[l].transpose();
      db.noalias() += delta.rowwise().sum();
      if (l > 0) {
        Matrix upstream = W.transpose() * delta;
        delta = upstream.array() * (1.0 - pass.acts[l].array().square());
      }
    }
  }
  return total - static_cast<double>(B) * log_jac;
}

namespace {
Matrix standardize(const Matrix& x, const Vector& shift, const Vector& scale) {
  return (x.colwise() - shift).array().colwise() / scale.array();
}
}  // namespace

Vector MixtureDensityNetwork::logpdf(const EstimatorParams& phi, const Matrix& conditions,
                                     const Matrix& targets) const {
  check_inputs(phi, conditions, targets);
  const Matrix x = standardize(conditions, standardizer_.condition_shift, standardizer_.condition_scale);
  const Matrix y = standardize(targets, standardizer_.target_shift, standardizer_.target_scale);
  const Eigen::Index B = x.cols();
  Vector out(B);
  const auto n_chunks = static_cast<std::size_t>((B + kChunk - 1) / kChunk);
  parallel_for(n_chunks, [&](std::size_t c) {
    const Eigen::Index begin = static_cast<Eigen::Index>(c) * kChunk;
    const Eigen::Index len = std::min(kChunk, B - begin);
    chunk_eval(phi, x.middleCols(begin, len), y.middleCols(begin, len), &out, begin, nullptr, 0.0);
  });
  return out;
}

double MixtureDensityNetwork::logpdf(const EstimatorParams& phi, const Vector& condition,
                                     const Vector& target) const {
  return logpdf(phi, Matrix(condition), Matrix(target))[0];
}

LogDensityBatch MixtureDensityNetwork::logpdf_grad(const EstimatorParams& phi, const Matrix& conditions,
                                                   const Matrix& targets) const {
  check_inputs(phi, conditions, targets);
  const Matrix x = standardize(conditions, standardizer_.condition_shift, standardizer_.condition_scale);
  const Matrix y = standardize(targets, standardizer_.target_shift, standardizer_.target_scale);
  const Eigen::Index B = x.cols();
  const double scale = 1.0 / static_cast<double>(B);
  LogDensityBatch out;
  out.values.resize(B);
  const auto n_chunks = static_cast<std::size_t>((B + kChunk - 1) / kChunk);
  std::vector<Vector> partial(n_chunks, Vector::Zero(phi.values.size()));
  parallel_for(n_chunks, [&](std::size_t c) {
    const Eigen::Index begin = static_cast<Eigen::Index>(c) * kChunk;
    const Eigen::Index len = std::min(kChunk, B - begin);
    chunk_eval(phi, x.middleCols(begin, len), y.middleCols(begin, len), &out.values, begin, &partial[c], scale);
  });
  out.grad_phi = std::move(partial[0]);
  for (std::size_t c = 1; c < n_chunks; ++c) out.grad_phi += partial[c];
  return out;
}

MixtureComponents MixtureDensityNetwork::components(const EstimatorParams& phi, const Vector& condition) const {
  check_inputs(phi, Matrix(condition), Matrix::Zero(static_cast<Eigen::Index>(config_.target_dim), 1));
  Pass pass;
  forward(phi, standardize(Matrix(condition), standardizer_.condition_shift, standardizer_.condition_scale), pass);
  const auto K = static_cast<Eigen::Index>(config_.n_components);
  const auto D = static_cast<Eigen::Index>(config_.target_dim);
  const Vector o = pass.head.col(0);
  MixtureComponents mc;
  const double max_logit = o.head(K).maxCoeff();
  mc.weights = (o.head(K).array() - max_logit).exp();
  mc.weights /= mc.weights.sum();
  mc.means.resize(D, K);
  mc.sds.resize(D, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index j = 0; j < D; ++j) {
      mc.means(j, k) = standardizer_.target_shift[j] + standardizer_.target_scale[j] * o[K + k * D + j];
      mc.sds(j, k) = standardizer_.target_scale[j] * (softplus(o[K + K * D + k * D + j]) + kSigmaFloor);
    }
  }
  return mc;
}

Matrix MixtureDensityNetwork::sample(const EstimatorParams& phi, const Vector& condition, std::size_t n,
                                     const SeedKey& key) const {
  require(n >= 1, "mdn: sample count must be >= 1");
  const MixtureComponents mc = components(phi, condition);
  const auto K = mc.weights.size();
  const auto D = mc.means.rows();
  RandomStream rs(key);
  Matrix out(D, static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    const double u = rs.uniform();
    Eigen::Index k = 0;
    double cum = mc.weights[0];
    while (u > cum && k + 1 < K) cum += mc.weights[++k];
    for (Eigen::Index j = 0; j < D; ++j) out(j, i) = mc.means(j, k) + mc.sds(j, k) * rs.normal();
  }
  return out;
}

// ---- checkpoints ---------------------------------------------------------------

namespace {

json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json header;
  header["format"] = "mlsbi-mdn-checkpoint";
  header["version"] = 1;
  header["config"] = {{"condition_dim", ckpt.config.condition_dim},
                      {"target_dim", ckpt.config.target_dim},
                      {"hidden_layers", ckpt.config.hidden_layers},
                      {"n_components", ckpt.config.n_components},
                      {"activation", ckpt.config.activation}};
  header["standardizer"] = {{"condition_shift", vec_json(ckpt.standardizer.condition_shift)},
                            {"condition_scale", vec_json(ckpt.standardizer.condition_scale)},
                            {"target_shift", vec_json(ckpt.standardizer.target_shift)},
                            {"target_scale", vec_json(ckpt.standardizer.target_scale)}};
  json layout = json::array();
  for (const auto& s : ckpt.params.layout)
    layout.push_back({{"name", s.name}, {"shape", {s.rows, s.cols}}, {"offset", s.offset}});
  header["layout"] = layout;
  header["n_params"] = ckpt.params.size();
  header["encoding"] = "float64-le";
  header["metadata"] = json::parse(ckpt.metadata_json);

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
  os << header.dump() << '\n';
  for (Eigen::Index i = 0; i < ckpt.params.values.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(ckpt.params.values[i]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    char bytes[8];
    std::memcpy(bytes, &bits, 8);
    os.write(bytes, 8);
  }
  if (!os) throw IoError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  std::string line;
  std::getline(is, line);
  const json header = json::parse(line);
  if (header.value("format", "") != "mlsbi-mdn-checkpoint")
    throw IoError("not an mlsbi checkpoint: " + path.string());
  Checkpoint ckpt;
  const auto& c = header.at("config");
  ckpt.config.condition_dim = c.at("condition_dim");
  ckpt.config.target_dim = c.at("target_dim");
  ckpt.config.hidden_layers = c.at("hidden_layers").get<std::vector<std::size_t>>();
  ckpt.config.n_components = c.at("n_components");
  ckpt.config.activation = c.at("activation");
  const auto& s = header.at("standardizer");
  ckpt.standardizer = {json_vec(s.at("condition_shift")), json_vec(s.at("condition_scale")),
                       json_vec(s.at("target_shift")), json_vec(s.at("target_scale"))};
  for (const auto& slot : header.at("layout"))
    ckpt.params.layout.push_back({slot.at("name"), slot.at("shape")[0], slot.at("shape")[1], slot.at("offset")});
  const std::size_t n = header.at("n_params");
  ckpt.params.values.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    char bytes[8];
    if (!is.read(bytes, 8)) throw IoError("truncated checkpoint: " + path.string());
    std::uint64_t bits;
    std::memcpy(&bits, bytes, 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    ckpt.params.values[static_cast<Eigen::Index>(i)] = std::bit_cast<double>(bits);
  }
  ckpt.metadata_json = header.value("metadata", json::object()).dump();
  // Layout must be consistent with the declared architecture.
  const MixtureDensityNetwork net(ckpt.config, ckpt.standardizer);
  const EstimatorParams expected = net.make_layout();
  if (expected.size() != n) throw IoError("checkpoint layout does not match its config");
  return ckpt;
}

}  // namespace mlsbi
