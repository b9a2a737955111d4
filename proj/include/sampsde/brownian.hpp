#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "sampsde/errors.hpp"
#include "sampsde/time_grid.hpp"

namespace sampsde {
namespace rng {

/// splitmix64 finalizer; full-avalanche 64-bit mixer.
inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

/// Counter-based word: a pure function of the key tuple, so draws are
/// reproducible under any execution order.
inline std::uint64_t keyed_word(std::uint64_t seed, std::uint64_t path_id, std::uint64_t step,
                                std::uint64_t component, std::uint64_t draw) {
  std::uint64_t h = mix64(seed + kGolden);
  h = mix64(h ^ (path_id + kGolden));
  h = mix64(h ^ (step + kGolden));
  h = mix64(h ^ (component + kGolden));
  h = mix64(h ^ (draw + kGolden));
  return h;
}

/// Uniform in (0, 1] from the top 53 bits.
inline double to_unit(std::uint64_t word) {
  return (static_cast<double>(word >> 11) + 1.0) * 0x1.0p-53;
}

/// Standard normal keyed by (seed, path_id, step, component), via Box-Muller.
inline double keyed_normal(std::uint64_t seed, std::uint64_t path_id, std::uint64_t step,
                           std::uint64_t component) {
  const double u1 = to_unit(keyed_word(seed, path_id, step, component, 0));
  const double u2 = to_unit(keyed_word(seed, path_id, step, component, 1));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace rng

/// Brownian increments over one TimeGrid: per step an n-vector of draws with
/// per-component variance equal to the step length. Immutable once built;
/// regenerating with equal (seed, path_id, grid) is bitwise-identical.
struct BrownianPath {
  const TimeGrid* grid = nullptr;
  Eigen::Index dim = 0;
  std::uint64_t seed = 0;
  std::uint64_t path_id = 0;
  std::vector<double> increments;  ///< row-major [step * dim + component]

  std::size_t step_count() const { return grid ? grid->step_count() : 0; }

  /// Unchecked view of step i's increment vector.
  Eigen::Map<const Vector> increment(std::size_t i) const {
    return Eigen::Map<const Vector>(increments.data() + i * static_cast<std::size_t>(dim), dim);
  }
};

namespace detail {

inline double keyed_increment(const TimeGrid& grid, std::uint64_t seed, std::uint64_t path_id,
                              std::size_t step, Eigen::Index component) {
  return rng::keyed_normal(seed, path_id, step, static_cast<std::uint64_t>(component)) *
         std::sqrt(grid.step(step));
}

}  // namespace detail

inline BrownianPath generate_path(const TimeGrid& grid, Eigen::Index dim, std::uint64_t seed,
                                  std::uint64_t path_id) {
  if (dim < 1) throw std::invalid_argument("generate_path: dim must be >= 1");
  BrownianPath path;
  path.grid = &grid;
  path.dim = dim;
  path.seed = seed;
  path.path_id = path_id;
  const std::size_t steps = grid.step_count();
  path.increments.resize(steps * static_cast<std::size_t>(dim));
  for (std::size_t i = 0; i < steps; ++i)
    for (Eigen::Index c = 0; c < dim; ++c)
      path.increments[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(c)] =
          detail::keyed_increment(grid, seed, path_id, i, c);
  return path;
}

/// Bounds-checked copy of step i's increment.
inline Vector increment_between(const BrownianPath& path, std::size_t i) {
  if (i >= path.step_count())
    throw std::out_of_range("increment_between: step " + std::to_string(i) + " out of range [0, " +
                            std::to_string(path.step_count()) + ")");
  return Vector(path.increment(i));
}

// Binary dump for cross-implementation replay: 32-byte header
// (8-byte magic, u64 dim, u64 step count, u64 seed), then the increments as
// little-endian 64-bit floats, row-major (step, component).
inline constexpr char kIncrementMagic[8] = {'S', 'S', 'D', 'E', 'B', 'R', 'W', '1'};

inline void write_increments(const BrownianPath& path, const std::string& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("write_increments: cannot open " + file);
  out.write(kIncrementMagic, 8);
  const std::uint64_t dim = static_cast<std::uint64_t>(path.dim);
  const std::uint64_t steps = path.step_count();
  out.write(reinterpret_cast<const char*>(&dim), 8);
  out.write(reinterpret_cast<const char*>(&steps), 8);
  out.write(reinterpret_cast<const char*>(&path.seed), 8);
  out.write(reinterpret_cast<const char*>(path.increments.data()),
            static_cast<std::streamsize>(path.increments.size() * sizeof(double)));
  if (!out) throw std::runtime_error("write_increments: write failed for " + file);
}

struct IncrementDump {
  std::uint64_t dim = 0;
  std::uint64_t steps = 0;
  std::uint64_t seed = 0;
  std::vector<double> increments;
};

inline IncrementDump read_increments(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("read_increments: cannot open " + file);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kIncrementMagic, 8) != 0)
    throw std::runtime_error("read_increments: bad magic in " + file);
  IncrementDump dump;
  in.read(reinterpret_cast<char*>(&dump.dim), 8);
  in.read(reinterpret_cast<char*>(&dump.steps), 8);
  in.read(reinterpret_cast<char*>(&dump.seed), 8);
  dump.increments.resize(dump.dim * dump.steps);
  in.read(reinterpret_cast<char*>(dump.increments.data()),
          static_cast<std::streamsize>(dump.increments.size() * sizeof(double)));
  if (!in) throw std::runtime_error("read_increments: truncated file " + file);
  return dump;
}

}  // namespace sampsde
