#pragma once

// Simulated datasets on disk: one CSV row per generator output
// (theta columns, data columns, level, role, sample index) plus a JSON
// sidecar with the seed, per-level counts and costs.

#include "mlsbi/mlmc_loss.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mlsbi {

struct DatasetMeta {
  std::string simulator;
  std::uint64_t seed = 0;
  std::size_t m = 1;
  std::vector<std::size_t> n_per_level;
  std::vector<double> unit_costs;
  std::vector<std::size_t> levels;  // generator level of each batch
  double total_cost = 0.0;
  std::string coupling = "seed_matched";
};

/// Writes `path` and `path` with ".json" appended to the stem.
void write_dataset(const std::filesystem::path& csv_path, const std::vector<LevelBatch>& batches,
                   const DatasetMeta& meta);

struct DatasetRow {
  Vector theta;
  Vector data;  // m * obs_dim values, observation-major
  std::size_t level = 0;
  bool lower = false;  // output of generator level - 1
  std::size_t index = 0;
};

struct Dataset {
  std::vector<DatasetRow> rows;
  std::size_t theta_dim = 0;
  std::size_t data_dim = 0;
};

Dataset read_dataset(const std::filesystem::path& csv_path);

/// Rebuilds level batches (without the noise) from rows read back from disk.
std::vector<LevelBatch> to_level_batches(const Dataset& ds, std::size_t m);

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path);

/// Writes a CSV with a header line; values printed with full precision.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

std::string format_double(double v);

}  // namespace mlsbi
