#include "mlsbi/rng.hpp"

#include "mlsbi/special.hpp"

#include <sstream>
#include <stdexcept>

namespace mlsbi {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline void mulhilo32(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace

std::uint64_t SeedKey::stream_id() const {
  std::uint64_t h = splitmix64(root);
  for (std::uint64_t p : path) h = splitmix64(h ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
  return h;
}

std::string SeedKey::to_string() const {
  std::ostringstream os;
  os << root << ":[";
  for (std::size_t i = 0; i < path.size(); ++i) os << (i ? "," : "") << path[i];
  os << "]";
  return os.str();
}

SeedKey derive_stream(const SeedKey& key, std::uint64_t child) {
  SeedKey out = key;
  out.path.push_back(child);
  return out;
}

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> c,
                                        std::array<std::uint32_t, 2> k) {
  constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo32(kM0, c[0], hi0, lo0);
    mulhilo32(kM1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    k[0] += kW0;
    k[1] += kW1;
  }
  return c;
}

double uniform_at(std::uint64_t stream_id, std::uint64_t row, std::uint64_t col) {
  const auto out = philox4x32(
      {static_cast<std::uint32_t>(row), static_cast<std::uint32_t>(row >> 32),
       static_cast<std::uint32_t>(col), static_cast<std::uint32_t>(col >> 32)},
      {static_cast<std::uint32_t>(stream_id), static_cast<std::uint32_t>(stream_id >> 32)});
  const std::uint64_t bits = ((static_cast<std::uint64_t>(out[0]) << 32) | out[1]) >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

const char* to_string(NoiseKind kind) {
  return kind == NoiseKind::uniform01 ? "uniform01" : "std_normal";
}

NoiseBlock sample_noise(const SeedKey& key, std::size_t m, std::size_t d, NoiseKind kind) {
  if (m == 0 || d == 0) throw std::invalid_argument("sample_noise: m and d must be >= 1");
  NoiseBlock block;
  block.kind = kind;
  block.values.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
  const std::uint64_t id = key.stream_id();
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      const double u = uniform_at(id, i, j);
      block.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          kind == NoiseKind::uniform01 ? u : normal_quantile(u);
    }
  }
  return block;
}

double RandomStream::normal() { return normal_quantile(uniform()); }

}  // namespace mlsbi
