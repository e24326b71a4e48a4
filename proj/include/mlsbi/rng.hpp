#pragma once

// Counter-based random streams used for common random numbers across
// fidelity levels. A stream is identified by a SeedKey; the draw at
// (row, column) of a noise block is a pure function of (key, row, column),
// so a narrower block is always a bitwise prefix of a wider one.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace mlsbi {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::VectorXd;

struct SeedKey {
  std::uint64_t root = 0;
  std::vector<std::uint64_t> path;

  /// 64-bit identifier mixed from root and path; the Philox key.
  std::uint64_t stream_id() const;
  std::string to_string() const;

  friend bool operator==(const SeedKey&, const SeedKey&) = default;
};

SeedKey derive_stream(const SeedKey& key, std::uint64_t child);

/// Philox4x32-10 block function.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Uniform draw in the open interval (0, 1) at a 2-D counter position.
double uniform_at(std::uint64_t stream_id, std::uint64_t row, std::uint64_t col);

enum class NoiseKind { uniform01, std_normal };

const char* to_string(NoiseKind kind);

struct NoiseBlock {
  Matrix values;  // m rows x d_U columns
  NoiseKind kind = NoiseKind::uniform01;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index dim() const { return values.cols(); }
};

/// m x d block of i.i.d. draws. Normal draws are the inverse-CDF transform of
/// the uniform draws at the same positions.
NoiseBlock sample_noise(const SeedKey& key, std::size_t m, std::size_t d, NoiseKind kind);

/// Sequential view over a counter-based stream, for consumers that need an
/// open-ended number of draws (samplers, initialisers).
class RandomStream {
 public:
  explicit RandomStream(const SeedKey& key) : id_(key.stream_id()) {}

  double uniform() { return uniform_at(id_, counter_++, 0); }
  double normal();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t position() const { return counter_; }

 private:
  std::uint64_t id_;
  std::uint64_t counter_ = 0;
};

}  // namespace mlsbi
