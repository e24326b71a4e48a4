#include "mlsbi/dataset_io.hpp"

#include <json.hpp>

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace mlsbi {

namespace fs = std::filesystem;

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

fs::path sidecar_path(const fs::path& csv_path) {
  fs::path p = csv_path;
  p.replace_extension(".json");
  return p;
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void write_dataset(const fs::path& csv_path, const std::vector<LevelBatch>& batches, const DatasetMeta& meta) {
  if (batches.empty() || batches[0].samples.empty()) throw std::invalid_argument("write_dataset: empty dataset");
  const auto& first = batches[0].samples[0];
  const Eigen::Index dt = first.theta.size();
  const Eigen::Index dx = first.x_hi.size();

  std::ofstream out(csv_path);
  if (!out) throw IoError("cannot open " + csv_path.string() + " for writing");
  for (Eigen::Index j = 0; j < dt; ++j) out << "theta_" << j << ',';
  for (Eigen::Index j = 0; j < dx; ++j) out << "x_" << j << ',';
  out << "level,role,index\n";

  auto emit = [&](const Vector& theta, const Matrix& x, std::size_t level, const char* role, std::size_t idx) {
    for (Eigen::Index j = 0; j < dt; ++j) out << format_double(theta[j]) << ',';
    // Observation-major flattening: row j of x occupies a contiguous run.
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      for (Eigen::Index c = 0; c < x.cols(); ++c) out << format_double(x(r, c)) << ',';
    out << level << ',' << role << ',' << idx << '\n';
  };
  for (const auto& b : batches) {
    for (std::size_t i = 0; i < b.samples.size(); ++i) {
      const auto& s = b.samples[i];
      emit(s.theta, s.x_hi, b.level, "hi", i);
      if (s.x_lo) emit(s.theta, *s.x_lo, b.level, "lo", i);
    }
  }
  if (!out) throw IoError("write failed for " + csv_path.string());

  nlohmann::json j;
  j["simulator"] = meta.simulator;
  j["seed"] = meta.seed;
  j["m"] = meta.m;
  j["n_per_level"] = meta.n_per_level;
  j["levels"] = meta.levels;
  j["unit_costs"] = meta.unit_costs;
  j["total_cost"] = meta.total_cost;
  j["coupling"] = meta.coupling;
  j["theta_dim"] = dt;
  j["data_dim"] = dx;
  j["csv"] = csv_path.filename().string();
  std::ofstream side(sidecar_path(csv_path));
  side << j.dump(2) << '\n';
}

Dataset read_dataset(const fs::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open " + csv_path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(csv_path.string() + ": empty file");
  Dataset ds;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) {
      if (col.rfind("theta_", 0) == 0) ++ds.theta_dim;
      else if (col.rfind("x_", 0) == 0) ++ds.data_dim;
    }
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != ds.theta_dim + ds.data_dim + 3)
      throw IoError(csv_path.string() + ":" + std::to_string(lineno) + ": wrong number of columns");
    DatasetRow row;
    row.theta.resize(static_cast<Eigen::Index>(ds.theta_dim));
    row.data.resize(static_cast<Eigen::Index>(ds.data_dim));
    std::size_t k = 0;
    for (std::size_t j = 0; j < ds.theta_dim; ++j) row.theta[static_cast<Eigen::Index>(j)] = std::stod(cells[k++]);
    for (std::size_t j = 0; j < ds.data_dim; ++j) row.data[static_cast<Eigen::Index>(j)] = std::stod(cells[k++]);
    row.level = std::stoul(cells[k++]);
    const std::string role = cells[k++];
    if (role != "hi" && role != "lo")
      throw IoError(csv_path.string() + ":" + std::to_string(lineno) + ": role must be hi or lo");
    row.lower = role == "lo";
    row.index = std::stoul(cells[k]);
    ds.rows.push_back(std::move(row));
  }
  return ds;
}

std::vector<LevelBatch> to_level_batches(const Dataset& ds, std::size_t m) {
  if (m == 0 || ds.data_dim % m != 0) throw std::invalid_argument("to_level_batches: m does not divide the data width");
  const auto obs = static_cast<Eigen::Index>(ds.data_dim / m);
  std::map<std::size_t, LevelBatch> by_level;
  auto as_matrix = [&](const Vector& v) {
    Matrix x(static_cast<Eigen::Index>(m), obs);
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      for (Eigen::Index c = 0; c < obs; ++c) x(r, c) = v[r * obs + c];
    return x;
  };
  for (const auto& row : ds.rows) {
    LevelBatch& b = by_level[row.level];
    b.level = row.level;
    if (b.samples.size() <= row.index) b.samples.resize(row.index + 1);
    auto& s = b.samples[row.index];
    s.theta = row.theta;
    if (row.lower) s.x_lo = as_matrix(row.data);
    else s.x_hi = as_matrix(row.data);
  }
  std::vector<LevelBatch> out;
  for (auto& [level, b] : by_level) out.push_back(std::move(b));
  return out;
}

}  // namespace mlsbi
