#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "sampsde/brownian.hpp"
#include "sampsde/errors.hpp"
#include "sampsde/integrators.hpp"
#include "sampsde/model.hpp"
#include "sampsde/time_grid.hpp"

namespace sampsde {

/// Max over nodes of the 1-norm of a - b (the paper's |.| convention).
inline double sup_error_1norm(const std::vector<Vector>& a, const std::vector<Vector>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("sup_error_1norm: series lengths differ (" +
                                std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  double sup = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    sup = std::max(sup, (a[i] - b[i]).lpNorm<1>());
  return sup;
}

namespace detail {

/// Compensated (Kahan) summation; reductions run in path_id order so that
/// aggregates are bitwise-stable across thread counts.
struct KahanSum {
  double sum = 0.0;
  double comp = 0.0;
  void add(double value) {
    const double y = value - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
};

/// Spawns identical workers pulling indices from a shared counter; the first
/// exception is captured and rethrown after joining.
template <typename Body>
void run_indexed_workers(std::size_t count, int threads, Body&& body) {
  std::size_t n_threads = threads > 0 ? static_cast<std::size_t>(threads)
                                      : std::max(1u, std::thread::hardware_concurrency());
  n_threads = std::min(n_threads, std::max<std::size_t>(count, 1));
  std::atomic<std::size_t> next{0};
  if (n_threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto worker = [&]() {
    try {
      for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) body(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!first_error) first_error = std::current_exception();
      next.store(count);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct MeanWithError {
  double mean = 0.0;
  double se = 0.0;
};

/// Mean and standard error over the retained entries (NaN-free Kahan pass in
/// index order, then a compensated second pass for the sample variance).
inline MeanWithError reduce_mean(const std::vector<double>& values,
                                 const std::vector<char>& keep) {
  KahanSum sum;
  std::size_t r = 0;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (keep[i]) {
      sum.add(values[i]);
      ++r;
    }
  MeanWithError out;
  out.mean = sum.sum / static_cast<double>(r);
  if (r > 1) {
    KahanSum ss;
    for (std::size_t i = 0; i < values.size(); ++i)
      if (keep[i]) {
        const double d = values[i] - out.mean;
        ss.add(d * d);
      }
    out.se = std::sqrt(ss.sum / static_cast<double>(r - 1)) / std::sqrt(static_cast<double>(r));
  }
  return out;
}

}  // namespace detail

/// Monte Carlo estimates for one (epsilon, delta) cell. Sup norms are taken
/// over grid nodes in the 1-norm; terminal errors are per component with the
/// signed mean kept alongside the absolute one. All means run over the
/// n_paths - n_diverged retained paths.
struct ErrorSummary {
  double epsilon = 0.0;
  double delta = 0.0;
  double regime_c = 0.0;
  double kappa_eps = 0.0;
  std::int64_t n_paths = 0;
  std::int64_t n_diverged = 0;
  double lln_sup_p1 = 0.0;  ///< mean of sup_t |X - x|
  double lln_sup_p1_se = 0.0;
  double lln_sup_p2 = 0.0;  ///< mean of sup_t |X - x|^2
  double lln_sup_p2_se = 0.0;
  double clt_sup = 0.0;  ///< mean of sup_t |X - x - eps Z| / eps; NaN when disabled
  double clt_sup_se = 0.0;
  Vector term_abs_err;  ///< per-component mean of |X_j(T) - x_j(T) - eps Z_j(T)|
  Vector term_abs_err_se;
  Vector term_signed_err;  ///< same without the absolute value
  Vector term_signed_err_se;
};

struct RunCellOptions {
  int threads = 0;       ///< 0 = hardware concurrency
  bool with_clt = true;  ///< simulate Z and the CLT-type metrics
};

/// Simulates n_paths coupled bundles with path_ids 0..n_paths-1 and
/// aggregates the error metrics. The limit trajectory and the fluctuation
/// coefficients are shared across paths; per-path work is embarrassingly
/// parallel and the result is deterministic for fixed (model, config,
/// n_paths, seed) regardless of thread count. Diverged paths are excluded
/// from the aggregates and counted.
inline ErrorSummary run_cell(const SystemModel& model, const SimulationConfig& config,
                             std::int64_t n_paths, std::uint64_t seed,
                             const RunCellOptions& opts = {}) {
  config.validate();
  detail::require_state_dim(model, config.x0);
  if (n_paths < 1) throw std::invalid_argument("run_cell: n_paths must be >= 1");
  if (opts.with_clt && !(config.epsilon > 0.0))
    throw std::invalid_argument("run_cell: CLT metrics require epsilon > 0");
  if (opts.with_clt && !std::isfinite(config.regime_c))
    throw std::invalid_argument("run_cell: CLT metrics require a finite regime constant");

  const TimeGrid grid = config.make_grid();
  SimulationConfig limit_config = config;
  limit_config.euler_coupled = true;
  const std::vector<Vector> x_series = simulate_limit_ode(model, limit_config);

  detail::FluctuationCoeffs coeffs;
  if (opts.with_clt)
    coeffs = detail::build_fluctuation_coeffs(model, x_series, grid.step_count(), config.regime_c);

  const Eigen::Index n = model.state_dim;
  const std::size_t paths = static_cast<std::size_t>(n_paths);
  const std::size_t nodes = grid.nodes.size();
  const double eps = config.epsilon;
  const bool with_noise = eps > 0.0;

  std::vector<double> sup1(paths), sup2(paths), supc(paths);
  std::vector<std::vector<double>> term_abs(static_cast<std::size_t>(n)),
      term_sgn(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    term_abs[static_cast<std::size_t>(j)].resize(paths);
    term_sgn[static_cast<std::size_t>(j)].resize(paths);
  }
  std::vector<char> keep(paths, 1);

  struct Workspace {
    std::vector<Vector> x_buf;
    Vector dw, z;
  };
  std::vector<Workspace> workspaces(
      opts.threads > 0 ? static_cast<std::size_t>(opts.threads)
                       : std::max<std::size_t>(1, std::thread::hardware_concurrency()));
  std::atomic<std::size_t> ws_next{0};
  thread_local Workspace* ws_ptr = nullptr;

  const auto run_path = [&](std::size_t pid) {
    if (ws_ptr == nullptr || ws_ptr < workspaces.data() ||
        ws_ptr >= workspaces.data() + workspaces.size())
      ws_ptr = &workspaces[ws_next.fetch_add(1) % workspaces.size()];
    Workspace& ws = *ws_ptr;
    if (ws.x_buf.size() != nodes) ws.x_buf.assign(nodes, Vector::Zero(n));
    ws.dw.resize(n);
    ws.x_buf[0] = config.x0;
    ws.z = Vector::Zero(n);

    double path_sup1 = 0.0, path_supc = 0.0;
    bool diverged = false;
    for (std::size_t i = 0; i < nodes - 1; ++i) {
      const double h = grid.step(i);
      const Vector& x = ws.x_buf[i];
      const Vector& held = ws.x_buf[grid.sample_index[i]];
      Vector next = x + h * (model.f(x) + model.g(x) * model.kappa(held));
      if (with_noise) {
        for (Eigen::Index c = 0; c < n; ++c)
          ws.dw[c] = detail::keyed_increment(grid, seed, pid, i, c);
        next += eps * (eval_sigma(model, x) * ws.dw);
      }
      if (opts.with_clt)
        ws.z += h * (coeffs.a[i] * ws.z + coeffs.b[i]) + coeffs.sigma[i] * ws.dw;
      if (!next.allFinite() || (opts.with_clt && !ws.z.allFinite())) {
        diverged = true;
        break;
      }
      ws.x_buf[i + 1] = next;
      path_sup1 = std::max(path_sup1, (next - x_series[i + 1]).lpNorm<1>());
      if (opts.with_clt)
        path_supc = std::max(
            path_supc, (next - x_series[i + 1] - eps * ws.z).lpNorm<1>() / eps);
    }

    if (diverged) {
      keep[pid] = 0;
      return;
    }
    sup1[pid] = path_sup1;
    sup2[pid] = path_sup1 * path_sup1;
    supc[pid] = path_supc;
    const Vector& xT = ws.x_buf[nodes - 1];
    const Vector& xlimT = x_series[nodes - 1];
    for (Eigen::Index j = 0; j < n; ++j) {
      const double e =
          opts.with_clt ? xT[j] - xlimT[j] - eps * ws.z[j] : xT[j] - xlimT[j];
      term_sgn[static_cast<std::size_t>(j)][pid] = e;
      term_abs[static_cast<std::size_t>(j)][pid] = std::abs(e);
    }
  };
  detail::run_indexed_workers(paths, opts.threads, run_path);

  const std::int64_t diverged_count =
      static_cast<std::int64_t>(std::count(keep.begin(), keep.end(), char{0}));
  if (diverged_count == n_paths)
    throw std::runtime_error("run_cell: all " + std::to_string(n_paths) + " paths diverged");

  ErrorSummary summary;
  summary.epsilon = config.epsilon;
  summary.delta = config.delta;
  summary.regime_c = config.regime_c;
  summary.kappa_eps = config.kappa_eps();
  summary.n_paths = n_paths;
  summary.n_diverged = diverged_count;
  const auto m1 = detail::reduce_mean(sup1, keep);
  summary.lln_sup_p1 = m1.mean;
  summary.lln_sup_p1_se = m1.se;
  const auto m2 = detail::reduce_mean(sup2, keep);
  summary.lln_sup_p2 = m2.mean;
  summary.lln_sup_p2_se = m2.se;
  if (opts.with_clt) {
    const auto mc = detail::reduce_mean(supc, keep);
    summary.clt_sup = mc.mean;
    summary.clt_sup_se = mc.se;
  } else {
    summary.clt_sup = std::numeric_limits<double>::quiet_NaN();
    summary.clt_sup_se = std::numeric_limits<double>::quiet_NaN();
  }
  summary.term_abs_err.resize(n);
  summary.term_abs_err_se.resize(n);
  summary.term_signed_err.resize(n);
  summary.term_signed_err_se.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto ma = detail::reduce_mean(term_abs[static_cast<std::size_t>(j)], keep);
    summary.term_abs_err[j] = ma.mean;
    summary.term_abs_err_se[j] = ma.se;
    const auto ms = detail::reduce_mean(term_sgn[static_cast<std::size_t>(j)], keep);
    summary.term_signed_err[j] = ms.mean;
    summary.term_signed_err_se[j] = ms.se;
  }
  return summary;
}

/// How the regime constant is assigned across a sweep: held fixed from the
/// base config (the default; kappa_eps then reports the per-cell
/// discrepancy), or recomputed as delta/epsilon per cell.
enum class RegimePolicy { FromConfig, DeltaOverEpsilon };

/// One ErrorSummary per epsilon with every other parameter fixed.
inline std::vector<ErrorSummary> sweep_epsilon(const SystemModel& model,
                                               const SimulationConfig& base_config,
                                               const std::vector<double>& epsilons,
                                               std::int64_t n_paths, std::uint64_t seed,
                                               const RunCellOptions& opts = {},
                                               RegimePolicy policy = RegimePolicy::FromConfig) {
  if (epsilons.empty()) throw std::invalid_argument("sweep_epsilon: epsilons must be nonempty");
  for (double e : epsilons)
    if (!(e > 0.0)) throw std::invalid_argument("sweep_epsilon: epsilons must be positive");
  std::vector<ErrorSummary> summaries;
  summaries.reserve(epsilons.size());
  for (double e : epsilons) {
    SimulationConfig cell = base_config;
    cell.epsilon = e;
    if (policy == RegimePolicy::DeltaOverEpsilon) cell.regime_c = cell.delta / e;
    summaries.push_back(run_cell(model, cell, n_paths, seed, opts));
  }
  return summaries;
}

/// Least-squares fit on a log2-log2 scale.
struct RateFit {
  std::vector<std::pair<double, double>> points;  ///< (log2 eps, log2 error)
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Ordinary least squares of log2(error) against log2(epsilon).
inline RateFit fit_rate(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2) throw std::invalid_argument("fit_rate: need at least 2 points");
  RateFit fit;
  fit.points.reserve(points.size());
  for (const auto& [eps, err] : points) {
    if (!(eps > 0.0) || !(err > 0.0))
      throw std::invalid_argument("fit_rate: epsilons and errors must be positive");
    fit.points.emplace_back(std::log2(eps), std::log2(err));
  }
  const double n = static_cast<double>(fit.points.size());
  double sx = 0.0, sy = 0.0;
  for (const auto& [x, y] : fit.points) {
    sx += x;
    sy += y;
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [x, y] : fit.points) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_rate: epsilons must be distinct");
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (syy == 0.0) {
    fit.r_squared = 1.0;
  } else {
    const double ss_res = syy - fit.slope * sxy;
    fit.r_squared = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  }
  return fit;
}

/// Closed-form moments for the scalar linear model f = a x, g = 1,
/// kappa(y) = -k y with constant diffusion:
///   x_T      = x0 exp((a-k) T)
///   E[Z_T]   = (c/2) k (a-k) x0 T exp((a-k) T)
///   Var[Z_T] = sigma^2 (exp(2 (a-k) T) - 1) / (2 (a-k)),  sigma^2 T at a = k.
struct LinearMoments {
  double x_T = 0.0;
  double mean_Z_T = 0.0;
  double var_Z_T = 0.0;
};

inline LinearMoments linear_oracle_moments(double a, double k, double c, double sigma_const,
                                           double T, double x0) {
  LinearMoments out;
  const double d = a - k;
  out.x_T = x0 * std::exp(d * T);
  out.mean_Z_T = 0.5 * c * k * d * x0 * T * std::exp(d * T);
  out.var_Z_T =
      d == 0.0 ? sigma_const * sigma_const * T : sigma_const * sigma_const * std::expm1(2.0 * d * T) / (2.0 * d);
  return out;
}

/// Monte Carlo moments of the terminal fluctuation Z_T, per component.
struct ZTerminalMoments {
  Vector mean;
  Vector mean_se;
  Vector variance;
  Vector variance_se;  ///< normal-approximation s^2 sqrt(2/(r-1))
  std::int64_t n_paths = 0;
};

/// Simulates Z alone (it needs only the limit trajectory and the noise) over
/// keyed paths and reports terminal mean and variance with standard errors.
inline ZTerminalMoments z_terminal_moments(const SystemModel& model,
                                           const SimulationConfig& config, std::int64_t n_paths,
                                           std::uint64_t seed, int threads = 0) {
  config.validate();
  if (n_paths < 2) throw std::invalid_argument("z_terminal_moments: n_paths must be >= 2");
  if (!std::isfinite(config.regime_c))
    throw std::invalid_argument("z_terminal_moments: requires a finite regime constant");
  const TimeGrid grid = config.make_grid();
  SimulationConfig limit_config = config;
  limit_config.euler_coupled = true;
  const std::vector<Vector> x_series = simulate_limit_ode(model, limit_config);
  const auto coeffs =
      detail::build_fluctuation_coeffs(model, x_series, grid.step_count(), config.regime_c);

  const Eigen::Index n = model.state_dim;
  const std::size_t paths = static_cast<std::size_t>(n_paths);
  std::vector<std::vector<double>> z_terminal(static_cast<std::size_t>(n));
  for (auto& column : z_terminal) column.resize(paths);

  detail::run_indexed_workers(paths, threads, [&](std::size_t pid) {
    Vector z = Vector::Zero(n);
    Vector dw(n);
    for (std::size_t i = 0; i < grid.step_count(); ++i) {
      for (Eigen::Index c = 0; c < n; ++c)
        dw[c] = detail::keyed_increment(grid, seed, pid, i, c);
      z += grid.step(i) * (coeffs.a[i] * z + coeffs.b[i]) + coeffs.sigma[i] * dw;
    }
    for (Eigen::Index j = 0; j < n; ++j) z_terminal[static_cast<std::size_t>(j)][pid] = z[j];
  });

  const std::vector<char> keep(paths, 1);
  ZTerminalMoments out;
  out.n_paths = n_paths;
  out.mean.resize(n);
  out.mean_se.resize(n);
  out.variance.resize(n);
  out.variance_se.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& column = z_terminal[static_cast<std::size_t>(j)];
    const auto m = detail::reduce_mean(column, keep);
    out.mean[j] = m.mean;
    out.mean_se[j] = m.se;
    detail::KahanSum ss;
    for (double v : column) ss.add((v - m.mean) * (v - m.mean));
    const double var = ss.sum / static_cast<double>(paths - 1);
    out.variance[j] = var;
    out.variance_se[j] = var * std::sqrt(2.0 / static_cast<double>(paths - 1));
  }
  return out;
}

/// Spearman rank correlation (average ranks on ties).
inline double spearman_rank_correlation(const std::vector<double>& x,
                                        const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("spearman_rank_correlation: need two equal-length series");
  const auto ranks = [](const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
      i = j + 1;
    }
    return rank;
  };
  const std::vector<double> rx = ranks(x);
  const std::vector<double> ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace sampsde
