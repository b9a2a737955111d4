#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sampsde/errors.hpp"

namespace sampsde {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Where a Jacobian comes from: closed form, or central differences on demand.
enum class JacobianSource { Analytic, FiniteDifference };

/// A sampled-data system as a bundle of pure maps on R^n:
///
///   drift f : R^n -> R^n,        control matrix g : R^n -> R^{n x m},
///   feedback kappa : R^n -> R^m, diffusion sigma : R^n -> R^{n x n},
///
/// plus the Jacobians Df (n x n), Dkappa (m x n) and Dg_i (m matrices,
/// each n x n, one per column of g) needed by the fluctuation equation.
/// sigma may be left empty, in which case the identity is substituted.
/// Models hold no state and are safe to share read-only across threads.
struct SystemModel {
  std::string name;
  Eigen::Index state_dim = 0;    ///< n
  Eigen::Index control_dim = 0;  ///< m

  std::function<Vector(const Vector&)> f;
  std::function<Matrix(const Vector&)> g;
  std::function<Vector(const Vector&)> kappa;
  std::function<Matrix(const Vector&)> sigma;

  std::function<Matrix(const Vector&)> df;
  std::function<Matrix(const Vector&)> dkappa;
  std::function<std::vector<Matrix>(const Vector&)> dg;

  JacobianSource df_source = JacobianSource::FiniteDifference;
  JacobianSource dkappa_source = JacobianSource::FiniteDifference;
  JacobianSource dg_source = JacobianSource::FiniteDifference;
};

namespace detail {

inline std::string point_to_string(const Vector& x) {
  std::ostringstream os;
  os << "(";
  for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
  os << ")";
  return os.str();
}

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& value, const char* map_name,
                    const Vector& at) {
  if (!value.allFinite())
    throw EvaluationError(std::string(map_name) + " returned a non-finite value at " +
                          point_to_string(at));
}

/// Central-difference Jacobian with step max(1, |x_j|) * eps_machine^(1/3).
template <typename Fn>
Matrix central_difference_jacobian(const Fn& fn, const Vector& x, Eigen::Index out_dim,
                                   const char* map_name) {
  static const double h0 = std::cbrt(std::numeric_limits<double>::epsilon());
  Matrix jac(out_dim, x.size());
  Vector xp = x;
  Vector xm = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = std::max(1.0, std::abs(x[j])) * h0;
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    const Vector fp = fn(xp);
    const Vector fm = fn(xm);
    require_finite(fp, map_name, xp);
    require_finite(fm, map_name, xm);
    jac.col(j) = (fp - fm) / (xp[j] - xm[j]);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return jac;
}

}  // namespace detail

/// Diffusion matrix with the identity default for models that omit sigma.
inline Matrix eval_sigma(const SystemModel& model, const Vector& x) {
  if (!model.sigma) return Matrix::Identity(model.state_dim, model.state_dim);
  return model.sigma(x);
}

inline Matrix eval_df(const SystemModel& model, const Vector& x) {
  if (model.df) return model.df(x);
  return detail::central_difference_jacobian(model.f, x, model.state_dim, "f");
}

inline Matrix eval_dkappa(const SystemModel& model, const Vector& x) {
  if (model.dkappa) return model.dkappa(x);
  return detail::central_difference_jacobian(model.kappa, x, model.control_dim, "kappa");
}

inline std::vector<Matrix> eval_dg(const SystemModel& model, const Vector& x) {
  if (model.dg) return model.dg(x);
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(model.control_dim));
  for (Eigen::Index i = 0; i < model.control_dim; ++i) {
    const auto column = [&model, i](const Vector& y) { return Vector(model.g(y).col(i)); };
    out.push_back(detail::central_difference_jacobian(column, x, model.state_dim, "g"));
  }
  return out;
}

/// The n x n product gDk(x) = g(x) * Dkappa(x).
struct GdkProduct {
  Matrix value;
};

inline GdkProduct eval_gdk(const SystemModel& model, const Vector& x) {
  if (x.size() != model.state_dim)
    throw ModelDefinitionError("eval_gdk: point has dimension " + std::to_string(x.size()) +
                               ", model declares n=" + std::to_string(model.state_dim));
  const Matrix gx = model.g(x);
  if (gx.rows() != model.state_dim || gx.cols() != model.control_dim)
    throw ModelDefinitionError("eval_gdk: g(x) is " + std::to_string(gx.rows()) + "x" +
                               std::to_string(gx.cols()) + ", declared " +
                               std::to_string(model.state_dim) + "x" +
                               std::to_string(model.control_dim));
  const Matrix dk = eval_dkappa(model, x);
  if (dk.rows() != model.control_dim || dk.cols() != model.state_dim)
    throw ModelDefinitionError("eval_gdk: Dkappa(x) is " + std::to_string(dk.rows()) + "x" +
                               std::to_string(dk.cols()) + ", declared " +
                               std::to_string(model.control_dim) + "x" +
                               std::to_string(model.state_dim));
  return GdkProduct{gx * dk};
}

/// One analytic-vs-central-difference comparison.
struct JacobianCheck {
  std::string map;
  Vector point;
  double rel_deviation = 0.0;
};

/// Result of check_jacobians over a point cloud. rel_deviation is measured
/// entrywise as |analytic - difference| / max(1, |difference|).
struct JacobianReport {
  double rel_tol = 0.0;
  bool passed = false;
  double max_rel_deviation = 0.0;
  JacobianCheck worst;
  std::vector<JacobianCheck> failures;
};

namespace detail {

inline double relative_deviation(const Matrix& analytic, const Matrix& numeric) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < analytic.rows(); ++i)
    for (Eigen::Index j = 0; j < analytic.cols(); ++j)
      dev = std::max(dev, std::abs(analytic(i, j) - numeric(i, j)) /
                              std::max(1.0, std::abs(numeric(i, j))));
  return dev;
}

}  // namespace detail

/// Compares the model's Jacobians against central differences at each point.
/// Passes iff every deviation is within rel_tol.
inline JacobianReport check_jacobians(const SystemModel& model, const std::vector<Vector>& points,
                                      double rel_tol) {
  if (!(rel_tol > 0.0)) throw std::invalid_argument("check_jacobians: rel_tol must be positive");
  if (points.empty()) throw std::invalid_argument("check_jacobians: points must be nonempty");

  JacobianReport report;
  report.rel_tol = rel_tol;

  const auto record = [&](const char* map, const Vector& x, double dev) {
    if (dev >= report.max_rel_deviation) {
      report.max_rel_deviation = dev;
      report.worst = JacobianCheck{map, x, dev};
    }
    if (dev > rel_tol) report.failures.push_back(JacobianCheck{map, x, dev});
  };

  for (const Vector& x : points) {
    {
      const Vector fx = model.f(x);
      detail::require_finite(fx, "f", x);
      const Matrix numeric = detail::central_difference_jacobian(model.f, x, model.state_dim, "f");
      record("df", x, detail::relative_deviation(eval_df(model, x), numeric));
    }
    {
      const Vector kx = model.kappa(x);
      detail::require_finite(kx, "kappa", x);
      const Matrix numeric =
          detail::central_difference_jacobian(model.kappa, x, model.control_dim, "kappa");
      record("dkappa", x, detail::relative_deviation(eval_dkappa(model, x), numeric));
    }
    {
      const Matrix gx = model.g(x);
      detail::require_finite(gx, "g", x);
      const std::vector<Matrix> analytic = eval_dg(model, x);
      for (Eigen::Index i = 0; i < model.control_dim; ++i) {
        const auto column = [&model, i](const Vector& y) { return Vector(model.g(y).col(i)); };
        const Matrix numeric =
            detail::central_difference_jacobian(column, x, model.state_dim, "g");
        record("dg", x, detail::relative_deviation(analytic[static_cast<std::size_t>(i)], numeric));
      }
    }
  }
  report.passed = report.max_rel_deviation <= rel_tol;
  return report;
}

/// Planar inverted pendulum with the Lipschitz-modified stabilizing law
///   u = 2 sin x1 + 1.35 x2 cos^2 x1 - 0.22 x2 cos x1
/// under dynamics x1' = x2, x2' = sin x1 - (cos x1) u. Diffusion defaults
/// to the identity.
inline SystemModel builtin_pendulum() {
  SystemModel model;
  model.name = "pendulum";
  model.state_dim = 2;
  model.control_dim = 1;
  model.f = [](const Vector& x) {
    Vector out(2);
    out << x[1], std::sin(x[0]);
    return out;
  };
  model.g = [](const Vector& x) {
    Matrix out(2, 1);
    out << 0.0, -std::cos(x[0]);
    return out;
  };
  model.kappa = [](const Vector& x) {
    const double c1 = std::cos(x[0]);
    Vector out(1);
    out << 2.0 * std::sin(x[0]) + 1.35 * x[1] * c1 * c1 - 0.22 * x[1] * c1;
    return out;
  };
  model.df = [](const Vector& x) {
    Matrix out(2, 2);
    out << 0.0, 1.0, std::cos(x[0]), 0.0;
    return out;
  };
  model.dkappa = [](const Vector& x) {
    const double s1 = std::sin(x[0]);
    const double c1 = std::cos(x[0]);
    Matrix out(1, 2);
    out << 2.0 * c1 - 2.7 * x[1] * c1 * s1 + 0.22 * x[1] * s1, 1.35 * c1 * c1 - 0.22 * c1;
    return out;
  };
  model.dg = [](const Vector& x) {
    Matrix d(2, 2);
    d << 0.0, 0.0, std::sin(x[0]), 0.0;
    return std::vector<Matrix>{d};
  };
  model.df_source = JacobianSource::Analytic;
  model.dkappa_source = JacobianSource::Analytic;
  model.dg_source = JacobianSource::Analytic;
  return model;
}

/// Scalar linear system f(x) = a x, g = 1, kappa(y) = -k y, sigma = 1.
/// Its limit ODE has drift (a - k) x, which makes it the closed-form
/// reference case for the oracle tests.
inline SystemModel builtin_scalar_linear(double a, double k) {
  SystemModel model;
  model.name = "scalar-linear";
  model.state_dim = 1;
  model.control_dim = 1;
  model.f = [a](const Vector& x) {
    Vector out(1);
    out << a * x[0];
    return out;
  };
  model.g = [](const Vector&) {
    Matrix out(1, 1);
    out << 1.0;
    return out;
  };
  model.kappa = [k](const Vector& y) {
    Vector out(1);
    out << -k * y[0];
    return out;
  };
  model.sigma = [](const Vector&) {
    Matrix out(1, 1);
    out << 1.0;
    return out;
  };
  model.df = [a](const Vector&) {
    Matrix out(1, 1);
    out << a;
    return out;
  };
  model.dkappa = [k](const Vector&) {
    Matrix out(1, 1);
    out << -k;
    return out;
  };
  model.dg = [](const Vector&) { return std::vector<Matrix>{Matrix::Zero(1, 1)}; };
  model.df_source = JacobianSource::Analytic;
  model.dkappa_source = JacobianSource::Analytic;
  model.dg_source = JacobianSource::Analytic;
  return model;
}

inline std::vector<std::string> builtin_model_names() { return {"pendulum", "scalar-linear"}; }

/// Looks a builtin model up by name. "scalar-linear" accepts parameters
/// {"a": ..., "k": ...} (defaults a=2, k=1); "pendulum" takes none.
inline SystemModel make_builtin_model(const std::string& name,
                                      const std::map<std::string, double>& params = {}) {
  if (name == "pendulum") {
    if (!params.empty())
      throw std::invalid_argument("model 'pendulum' takes no parameters");
    return builtin_pendulum();
  }
  if (name == "scalar-linear") {
    double a = 2.0;
    double k = 1.0;
    for (const auto& [key, value] : params) {
      if (key == "a")
        a = value;
      else if (key == "k")
        k = value;
      else
        throw std::invalid_argument("model 'scalar-linear': unknown parameter '" + key + "'");
    }
    return builtin_scalar_linear(a, k);
  }
  std::string known;
  for (const auto& n : builtin_model_names()) known += (known.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown model '" + name + "' (known: " + known + ")");
}

}  // namespace sampsde
