#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sampsde/brownian.hpp"
#include "sampsde/errors.hpp"
#include "sampsde/model.hpp"
#include "sampsde/time_grid.hpp"

namespace sampsde {

/// Parameters of one simulation cell. regime_c is the regime constant c;
/// set it to infinity to classify Regime 3 (for which no fluctuation limit
/// is simulated). kappa_eps() reports the discrepancy |delta/epsilon - c|
/// that enters the error bound when c is held fixed across a sweep.
struct SimulationConfig {
  double epsilon = 0.0;
  double delta = 0.0;
  double horizon = 0.0;
  double dt = 0.0;
  double regime_c = 0.0;
  Vector x0;
  GridMode grid_mode = GridMode::Union;
  bool euler_coupled = false;  ///< force explicit Euler for the limit ODE

  double kappa_eps() const {
    if (epsilon <= 0.0 || !std::isfinite(regime_c))
      return std::numeric_limits<double>::quiet_NaN();
    return std::abs(delta / epsilon - regime_c);
  }

  /// 1 when c = 0, 2 when c in (0, inf), 3 when c = inf.
  int regime() const {
    if (!std::isfinite(regime_c)) return 3;
    return regime_c == 0.0 ? 1 : 2;
  }

  void validate() const {
    if (!(epsilon >= 0.0)) throw std::invalid_argument("config: epsilon must be >= 0");
    if (!(delta > 0.0)) throw std::invalid_argument("config: delta must be > 0");
    if (!(dt > 0.0)) throw std::invalid_argument("config: dt must be > 0");
    if (!(horizon > 0.0)) throw std::invalid_argument("config: horizon must be > 0");
    if (std::isnan(regime_c) || regime_c < 0.0)
      throw std::invalid_argument("config: regime_c must be >= 0 or infinity");
    if (x0.size() == 0) throw std::invalid_argument("config: x0 must be set");
  }

  TimeGrid make_grid() const { return build_grid(horizon, dt, delta, grid_mode); }
};

/// Aligned trajectories from one noise path on one grid. z_rescaled is
/// (X - x)/epsilon in Regimes 1-2; in Regime 3 the bundle instead carries
/// (X - x)/delta there and z_limit stays empty.
struct TrajectoryBundle {
  TimeGrid grid;
  std::vector<Vector> x_sde;
  std::vector<Vector> x_limit;
  std::optional<std::vector<Vector>> x_sampled_ode;
  std::optional<std::vector<Vector>> z_limit;
  std::optional<std::vector<Vector>> z_rescaled;
};

namespace detail {

inline void require_state_dim(const SystemModel& model, const Vector& x0) {
  if (x0.size() != model.state_dim)
    throw ModelDefinitionError("x0 has dimension " + std::to_string(x0.size()) +
                               ", model declares n=" + std::to_string(model.state_dim));
}

inline void require_matching_path(const TimeGrid& grid, const BrownianPath& path,
                                  Eigen::Index dim) {
  if (path.grid == nullptr || path.dim != dim || path.grid->nodes != grid.nodes)
    throw std::invalid_argument("Brownian path does not match the configured grid");
}

inline void check_finite_state(const Vector& x, std::size_t node, double time) {
  if (!x.allFinite())
    throw DivergenceError("state became non-finite at node " + std::to_string(node) + " (t=" +
                              std::to_string(time) + ")",
                          node, time);
}

/// Hold-Euler recursion shared by the sampled SDE and sampled ODE: the
/// feedback argument is the stored state at sample_index(node), so with
/// path == nullptr (or epsilon == 0) this is exactly the deterministic
/// sampled-ODE recursion.
inline std::vector<Vector> simulate_hold_euler(const SystemModel& model, const TimeGrid& grid,
                                               const Vector& x0, double epsilon,
                                               const BrownianPath* path) {
  require_state_dim(model, x0);
  std::vector<Vector> series;
  series.reserve(grid.nodes.size());
  series.push_back(x0);
  const bool with_noise = path != nullptr && epsilon > 0.0;
  Vector x = x0;
  for (std::size_t i = 0; i < grid.step_count(); ++i) {
    const double h = grid.step(i);
    const Vector& held = series[grid.sample_index[i]];
    Vector next = x + h * (model.f(x) + model.g(x) * model.kappa(held));
    if (with_noise) next += epsilon * (eval_sigma(model, x) * path->increment(i));
    check_finite_state(next, i + 1, grid.nodes[i + 1]);
    series.push_back(next);
    x = std::move(next);
  }
  return series;
}

}  // namespace detail

/// One Euler-Maruyama step of the sampled SDE:
/// state + [f(state) + g(state) kappa(held_sample)] h + epsilon sigma(state) dW.
inline Vector step_sampled_sde(const SystemModel& model, const Vector& state,
                               const Vector& held_sample, double h, const Vector& dW,
                               double epsilon) {
  if (!(h > 0.0)) throw std::invalid_argument("step_sampled_sde: h must be positive");
  Vector next = state + h * (model.f(state) + model.g(state) * model.kappa(held_sample));
  if (epsilon != 0.0) next += epsilon * (eval_sigma(model, state) * dW);
  if (!next.allFinite())
    throw DivergenceError("step produced a non-finite state", 0, 0.0);
  return next;
}

/// Euler-Maruyama for the sampled SDE over the configured grid. The held
/// feedback argument is the stored state at sample_index(node): the exact
/// state at pi_delta(t) in Union mode, the snapped-node state in GridSnap.
inline std::vector<Vector> simulate_sampled_sde(const SystemModel& model,
                                                const SimulationConfig& config,
                                                const BrownianPath& path) {
  config.validate();
  const TimeGrid grid = config.make_grid();
  detail::require_matching_path(grid, path, model.state_dim);
  return detail::simulate_hold_euler(model, grid, config.x0, config.epsilon, &path);
}

/// The noiseless sampled system: explicit Euler with held feedback argument.
/// Node-for-node identical to simulate_sampled_sde at epsilon = 0.
inline std::vector<Vector> simulate_sampled_ode(const SystemModel& model,
                                                const SimulationConfig& config) {
  config.validate();
  const TimeGrid grid = config.make_grid();
  return detail::simulate_hold_euler(model, grid, config.x0, 0.0, nullptr);
}

namespace detail {

inline Vector limit_rhs(const SystemModel& model, const Vector& x) {
  return model.f(x) + model.g(x) * model.kappa(x);
}

}  // namespace detail

/// Integrates the limit ODE x' = f(x) + g(x) kappa(x) on the configured grid.
/// Default scheme is classical RK4; config.euler_coupled forces explicit
/// Euler so that coupled differences X - x are free of scheme mismatch.
inline std::vector<Vector> simulate_limit_ode(const SystemModel& model,
                                              const SimulationConfig& config) {
  config.validate();
  detail::require_state_dim(model, config.x0);
  const TimeGrid grid = config.make_grid();
  std::vector<Vector> series;
  series.reserve(grid.nodes.size());
  series.push_back(config.x0);
  Vector x = config.x0;
  for (std::size_t i = 0; i < grid.step_count(); ++i) {
    const double h = grid.step(i);
    Vector next;
    if (config.euler_coupled) {
      next = x + h * detail::limit_rhs(model, x);
    } else {
      const Vector k1 = detail::limit_rhs(model, x);
      const Vector k2 = detail::limit_rhs(model, x + (h / 2.0) * k1);
      const Vector k3 = detail::limit_rhs(model, x + (h / 2.0) * k2);
      const Vector k4 = detail::limit_rhs(model, x + h * k3);
      next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    detail::check_finite_state(next, i + 1, grid.nodes[i + 1]);
    series.push_back(next);
    x = std::move(next);
  }
  return series;
}

/// The effective drift of the limiting fluctuation SDE:
/// -(c/2) gDk(x) [f(x) + g(x) kappa(x)].
inline Vector effective_drift(const SystemModel& model, const Vector& x, double c) {
  if (!(c >= 0.0) || !std::isfinite(c))
    throw std::invalid_argument("effective_drift: c must be finite and >= 0");
  return -(c / 2.0) * (eval_gdk(model, x).value * detail::limit_rhs(model, x));
}

/// Coefficient of Z in the limiting fluctuation SDE:
/// Df(x) + gDk(x) + sum_i Dg_i(x) kappa_i(x).
inline Matrix fluctuation_drift_matrix(const SystemModel& model, const Vector& x) {
  Matrix a = eval_df(model, x) + eval_gdk(model, x).value;
  const Vector kappa = model.kappa(x);
  const std::vector<Matrix> dg = eval_dg(model, x);
  for (Eigen::Index i = 0; i < model.control_dim; ++i)
    a += dg[static_cast<std::size_t>(i)] * kappa[i];
  return a;
}

namespace detail {

/// Frozen per-node coefficients of the time-inhomogeneous linear SDE
/// dZ = [A(t) Z + b(t)] dt + sigma(x_t) dW evaluated along a limit trajectory.
/// They depend only on the limit trajectory, so one set serves every path.
struct FluctuationCoeffs {
  std::vector<Matrix> a;
  std::vector<Vector> b;
  std::vector<Matrix> sigma;
};

inline FluctuationCoeffs build_fluctuation_coeffs(const SystemModel& model,
                                                  const std::vector<Vector>& x_series,
                                                  std::size_t steps, double c) {
  FluctuationCoeffs coeffs;
  coeffs.a.reserve(steps);
  coeffs.b.reserve(steps);
  coeffs.sigma.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const Vector& x = x_series[i];
    coeffs.a.push_back(fluctuation_drift_matrix(model, x));
    coeffs.b.push_back(effective_drift(model, x, c));
    coeffs.sigma.push_back(eval_sigma(model, x));
  }
  return coeffs;
}

inline std::vector<Vector> simulate_fluctuation_from_coeffs(const FluctuationCoeffs& coeffs,
                                                            const TimeGrid& grid,
                                                            const BrownianPath& path,
                                                            Eigen::Index dim) {
  std::vector<Vector> series;
  series.reserve(grid.nodes.size());
  Vector z = Vector::Zero(dim);
  series.push_back(z);
  for (std::size_t i = 0; i < grid.step_count(); ++i) {
    const double h = grid.step(i);
    Vector next = z + h * (coeffs.a[i] * z + coeffs.b[i]) + coeffs.sigma[i] * path.increment(i);
    check_finite_state(next, i + 1, grid.nodes[i + 1]);
    series.push_back(next);
    z = std::move(next);
  }
  return series;
}

}  // namespace detail

/// Euler-Maruyama for the limiting fluctuation SDE along a precomputed limit
/// trajectory, driven by the same Brownian increments as the coupled X path.
/// Z_0 = 0. Requires a finite regime constant (Regimes 1 and 2).
inline std::vector<Vector> simulate_fluctuation_sde(const SystemModel& model,
                                                    const SimulationConfig& config,
                                                    const std::vector<Vector>& x_series,
                                                    const BrownianPath& path) {
  config.validate();
  if (!std::isfinite(config.regime_c))
    throw std::invalid_argument(
        "simulate_fluctuation_sde: Regime 3 (c = infinity) has no supported fluctuation limit");
  const TimeGrid grid = config.make_grid();
  detail::require_matching_path(grid, path, model.state_dim);
  if (x_series.size() != grid.nodes.size())
    throw std::invalid_argument("simulate_fluctuation_sde: x_series does not match the grid");
  const auto coeffs =
      detail::build_fluctuation_coeffs(model, x_series, grid.step_count(), config.regime_c);
  return detail::simulate_fluctuation_from_coeffs(coeffs, grid, path, model.state_dim);
}

/// Runs X, x (Euler, shared grid), the sampled ODE and Z on one grid and one
/// Brownian path, and fills the rescaled fluctuation series. Requires
/// epsilon > 0 in Regimes 1-2 (the rescaling divides by epsilon); Regime 3
/// produces X, x, x^delta and (X - x)/delta only.
inline TrajectoryBundle simulate_coupled(const SystemModel& model, const SimulationConfig& config,
                                         const BrownianPath& path) {
  config.validate();
  const bool regime3 = !std::isfinite(config.regime_c);
  if (!regime3 && !(config.epsilon > 0.0))
    throw std::invalid_argument("simulate_coupled: epsilon must be positive to rescale by it");

  TrajectoryBundle bundle;
  bundle.grid = config.make_grid();
  detail::require_matching_path(bundle.grid, path, model.state_dim);

  bundle.x_sde = detail::simulate_hold_euler(model, bundle.grid, config.x0, config.epsilon, &path);
  SimulationConfig limit_config = config;
  limit_config.euler_coupled = true;
  bundle.x_limit = simulate_limit_ode(model, limit_config);
  bundle.x_sampled_ode = detail::simulate_hold_euler(model, bundle.grid, config.x0, 0.0, nullptr);

  if (!regime3) {
    const auto coeffs = detail::build_fluctuation_coeffs(model, bundle.x_limit,
                                                         bundle.grid.step_count(), config.regime_c);
    bundle.z_limit =
        detail::simulate_fluctuation_from_coeffs(coeffs, bundle.grid, path, model.state_dim);
  }

  const double scale = regime3 ? config.delta : config.epsilon;
  std::vector<Vector> rescaled;
  rescaled.reserve(bundle.grid.nodes.size());
  for (std::size_t i = 0; i < bundle.grid.nodes.size(); ++i)
    rescaled.push_back((bundle.x_sde[i] - bundle.x_limit[i]) / scale);
  bundle.z_rescaled = std::move(rescaled);
  return bundle;
}

}  // namespace sampsde
