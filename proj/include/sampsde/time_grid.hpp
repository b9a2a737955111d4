#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "sampsde/errors.hpp"

namespace sampsde {

/// Rounds t down to the nearest multiple of the sampling period delta.
///
/// Floor arithmetic is repaired so that the returned multiple q*delta
/// satisfies q*delta <= t < (q+1)*delta in computed (double) arithmetic,
/// which makes the operator exactly idempotent and monotone.
inline double pi_delta(double t, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("pi_delta: delta must be positive");
  if (!(t >= 0.0)) throw std::invalid_argument("pi_delta: t must be nonnegative");
  double q = std::floor(t / delta);
  while (q > 0.0 && q * delta > t) q -= 1.0;
  while ((q + 1.0) * delta <= t) q += 1.0;
  return q * delta;
}

enum class GridMode {
  Union,    ///< nodes are {k*dt} ∪ {j*delta} ∪ {T}; sample instants are exact nodes
  GridSnap  ///< uniform {k*dt} ∪ {T}; held value snaps to the last node <= pi_delta(t)
};

inline const char* to_string(GridMode mode) {
  return mode == GridMode::Union ? "union" : "grid-snap";
}

/// Integration grid over [0, T]. Immutable after construction.
///
/// sample_index[i] locates the node holding the most recent sample at or
/// before nodes[i]: in Union mode nodes[sample_index[i]] == pi_delta(nodes[i], delta)
/// exactly; in GridSnap mode it is the last uniform node <= pi_delta(nodes[i], delta).
struct TimeGrid {
  std::vector<double> nodes;
  std::vector<std::size_t> sample_index;
  double delta = 0.0;
  double horizon = 0.0;
  GridMode mode = GridMode::Union;

  std::size_t step_count() const { return nodes.empty() ? 0 : nodes.size() - 1; }
  double step(std::size_t i) const { return nodes[i + 1] - nodes[i]; }

  bool operator==(const TimeGrid& other) const {
    return nodes == other.nodes && sample_index == other.sample_index &&
           delta == other.delta && horizon == other.horizon && mode == other.mode;
  }
};

inline constexpr std::size_t kDefaultNodeCap = std::size_t{1} << 26;

/// Builds the integration grid for one horizon.
///
/// Union mode merges the uniform grid with every sample instant j*delta <= T
/// (duplicates within 1e-12*T collapse onto the sample instant); the horizon
/// is always the final node. GridSnap keeps only the uniform grid, emulating
/// a fixed-step run where held values are grid-node approximations.
inline TimeGrid build_grid(double horizon, double dt, double delta, GridMode mode,
                           std::size_t node_cap = kDefaultNodeCap) {
  if (!(horizon > 0.0)) throw std::invalid_argument("build_grid: horizon must be positive");
  if (!(dt > 0.0)) throw std::invalid_argument("build_grid: dt must be positive");
  if (!(delta > 0.0)) throw std::invalid_argument("build_grid: delta must be positive");
  if (!(delta <= horizon)) throw std::invalid_argument("build_grid: delta must not exceed horizon");

  const double tol = 1e-12 * horizon;
  const double estimate = horizon / dt + (mode == GridMode::Union ? horizon / delta : 0.0) + 4.0;
  if (estimate > static_cast<double>(node_cap))
    throw ResourceError("build_grid: node count " + std::to_string(estimate) +
                        " exceeds cap " + std::to_string(node_cap));

  TimeGrid grid;
  grid.delta = delta;
  grid.horizon = horizon;
  grid.mode = mode;

  if (mode == GridMode::Union) {
    std::vector<double> nodes;
    std::vector<bool> is_sample;
    std::size_t j = 0, k = 0;
    const auto sample_at = [&](std::size_t idx) { return static_cast<double>(idx) * delta; };
    const auto uniform_at = [&](std::size_t idx) { return static_cast<double>(idx) * dt; };
    while (true) {
      const double s = sample_at(j);
      const double u = uniform_at(k);
      const bool s_in = s <= horizon + tol;
      const bool u_in = u <= horizon + tol;
      if (!s_in && !u_in) break;
      if (s_in && (!u_in || s <= u + tol)) {
        // sample instants win ties so that j*delta appears bitwise
        nodes.push_back(std::min(s, horizon));
        is_sample.push_back(true);
        ++j;
        if (u_in && std::abs(u - s) <= tol) ++k;
      } else {
        nodes.push_back(std::min(u, horizon));
        is_sample.push_back(false);
        ++k;
      }
    }
    if (nodes.empty() || nodes.back() < horizon - tol) {
      nodes.push_back(horizon);
      is_sample.push_back(false);
    } else {
      nodes.back() = horizon;  // the horizon is always the final node
    }
    grid.nodes = std::move(nodes);
    grid.sample_index.resize(grid.nodes.size());
    std::size_t last_sample = 0;
    for (std::size_t i = 0; i < grid.nodes.size(); ++i) {
      if (is_sample[i]) last_sample = i;
      grid.sample_index[i] = last_sample;
    }
  } else {
    std::vector<double> nodes;
    for (std::size_t k = 0;; ++k) {
      const double u = static_cast<double>(k) * dt;
      if (u >= horizon - tol) break;
      nodes.push_back(u);
    }
    nodes.push_back(horizon);
    grid.nodes = std::move(nodes);
    grid.sample_index.resize(grid.nodes.size());
    for (std::size_t i = 0; i < grid.nodes.size(); ++i) {
      const double held_at = pi_delta(grid.nodes[i], delta);
      const auto it = std::upper_bound(grid.nodes.begin(), grid.nodes.end(), held_at + tol);
      grid.sample_index[i] = static_cast<std::size_t>(it - grid.nodes.begin()) - 1;
    }
  }

  for (std::size_t i = 0; i + 1 < grid.nodes.size(); ++i) {
    if (!(grid.nodes[i] < grid.nodes[i + 1]))
      throw std::logic_error("build_grid: nodes not strictly increasing");
  }
  return grid;
}

}  // namespace sampsde
