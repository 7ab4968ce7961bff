#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bsvie/error.hpp"
#include "bsvie/mesh.hpp"
#include "bsvie/noise.hpp"
#include "bsvie/types.hpp"

namespace bsvie {

using Span = std::span<const double>;
using OutSpan = std::span<double>;

/// b(s, x) -> R^n
using DriftFn = std::function<void(double s, Span x, OutSpan out)>;
/// sigma(s, x) -> R^{n x d}, row-major
using DiffusionFn = std::function<void(double s, Span x, OutSpan out)>;
/// psi(t, x1, x2) -> R^m
using FreeTermFn = std::function<void(double t, Span x1, Span x2, OutSpan out)>;
/// g(t, s, x1, x2, y, z1, z2) -> R^m, with z1 and z2 m x d row-major
using DriverFn = std::function<void(double t, double s, Span x1, Span x2, Span y, Span z1, Span z2, OutSpan out)>;

struct Dimensions {
  std::size_t state = 1;  ///< n
  std::size_t value = 1;  ///< m
  std::size_t noise = 1;  ///< d
};

/// Closed-form adapted M-solution of a catalog instance.
///
/// Every catalog solution is a function of the Brownian values at its time
/// arguments, so the callbacks receive W(t) (and W(s)) rather than whole paths.
struct ClosedFormSolution {
  std::function<void(double t, Span w_t, OutSpan out)> exact_y;
  std::function<void(double t, double s, Span w_t, Span w_s, OutSpan out)> exact_z;
  /// Z(t, s) does not depend on the path.
  bool deterministic_z = false;

  /// Scheme output Y^pi(t_k, t_l) and Z^pi(t_k, t_l) as a function of W(t_l),
  /// valid for any increments with conditional mean 0 and variance dt_k.
  std::function<void(const TimeMesh&, std::size_t k, std::size_t l, Span w_l, OutSpan out)> discrete_y;
  std::function<void(const TimeMesh&, std::size_t k, std::size_t l, Span w_l, OutSpan out)> discrete_z;

  bool has_exact_discrete() const { return static_cast<bool>(discrete_y) && static_cast<bool>(discrete_z); }
};

struct ProblemInstance {
  std::string name;
  Dimensions dims;
  double horizon = 1.0;
  std::vector<double> x0;
  DriftFn drift;
  DiffusionFn diffusion;
  FreeTermFn free_term;
  DriverFn driver;
  /// Lipschitz constant of the coefficients; informational only.
  double lipschitz = 1.0;
  /// Exact X(t) as a function of W(t), when the SDE has an explicit transition.
  std::function<void(double t, Span w_t, OutSpan out)> exact_state;
  std::optional<ClosedFormSolution> closed_form;
};

using CatalogParams = std::map<std::string, double>;

namespace detail {

inline double param(const CatalogParams& p, const std::string& key, double fallback) {
  const auto it = p.find(key);
  const double v = it == p.end() ? fallback : it->second;
  if (!std::isfinite(v)) throw InvalidArgument("catalog: parameter '" + key + "' must be finite");
  return v;
}

/// n = m = d = 1, X = W, psi(t, x1, x2) = x2, g = 0.
inline ProblemInstance brownian_terminal(std::string name, double horizon) {
  if (!(horizon > 0.0)) throw InvalidArgument("catalog: T must be positive");
  ProblemInstance inst;
  inst.name = std::move(name);
  inst.horizon = horizon;
  inst.x0 = {0.0};
  inst.drift = [](double, Span, OutSpan out) { out[0] = 0.0; };
  inst.diffusion = [](double, Span, OutSpan out) { out[0] = 1.0; };
  inst.free_term = [](double, Span, Span x2, OutSpan out) { out[0] = x2[0]; };
  inst.driver = [](double, double, Span, Span, Span, Span, Span, OutSpan out) { out[0] = 0.0; };
  inst.exact_state = [](double, Span w, OutSpan out) { out[0] = w[0]; };
  return inst;
}

/// prod_{j=q}^{N-1} (1 - lambda dt_j)
inline double euler_discount(const TimeMesh& mesh, std::size_t q, double lambda) {
  double f = 1.0;
  for (std::size_t j = q; j < mesh.cells(); ++j) f *= 1.0 - lambda * mesh.step(j);
  return f;
}

}  // namespace detail

inline const std::vector<std::string>& catalog_names() {
  static const std::vector<std::string> names{"A_martingale", "C_linear_y", "E_linear_z2", "GBM_terminal"};
  return names;
}

/// Closed-form-solvable problem instances.
///
///  - A_martingale: X = W, psi = x2, g = 0.  Y(t) = W(t), Z = 1.
///  - C_linear_y (lambda): g = -lambda y.  Y(t) = exp(-lambda (T-t)) W(t).
///  - E_linear_z2 (c): g = c z2.  Y(t) = W(t) + c (T - t), Z = 1.
///  - GBM_terminal (mu, sigma, x0): dX = mu X dt + sigma X dW, psi = x2, g = 0.
///
/// Every family accepts T (default 1).
inline ProblemInstance catalog(const std::string& name, const CatalogParams& params = {}) {
  const double T = detail::param(params, "T", 1.0);
  if (name == "A_martingale") {
    auto inst = detail::brownian_terminal(name, T);
    ClosedFormSolution cf;
    cf.exact_y = [](double, Span w, OutSpan out) { out[0] = w[0]; };
    cf.exact_z = [](double, double, Span, Span, OutSpan out) { out[0] = 1.0; };
    cf.deterministic_z = true;
    cf.discrete_y = [](const TimeMesh&, std::size_t, std::size_t, Span w, OutSpan out) { out[0] = w[0]; };
    cf.discrete_z = [](const TimeMesh&, std::size_t, std::size_t, Span, OutSpan out) { out[0] = 1.0; };
    inst.closed_form = std::move(cf);
    return inst;
  }
  if (name == "C_linear_y") {
    const double lambda = detail::param(params, "lambda", 1.0);
    auto inst = detail::brownian_terminal(name, T);
    inst.lipschitz = std::max(1.0, std::abs(lambda));
    inst.driver = [lambda](double, double, Span, Span, Span y, Span, Span, OutSpan out) { out[0] = -lambda * y[0]; };
    ClosedFormSolution cf;
    cf.exact_y = [lambda, T](double t, Span w, OutSpan out) { out[0] = std::exp(-lambda * (T - t)) * w[0]; };
    cf.exact_z = [lambda, T](double t, double s, Span, Span, OutSpan out) {
      out[0] = std::exp(-lambda * (T - std::max(s, t)));
    };
    cf.deterministic_z = true;
    cf.discrete_y = [lambda](const TimeMesh& mesh, std::size_t k, std::size_t l, Span w, OutSpan out) {
      const std::size_t q = l > k ? l : k + 1;
      out[0] = w[0] * detail::euler_discount(mesh, q, lambda);
    };
    cf.discrete_z = [lambda](const TimeMesh& mesh, std::size_t k, std::size_t l, Span, OutSpan out) {
      out[0] = detail::euler_discount(mesh, std::max(k, l) + 1, lambda);
    };
    inst.closed_form = std::move(cf);
    return inst;
  }
  if (name == "E_linear_z2") {
    const double c = detail::param(params, "c", 1.0);
    auto inst = detail::brownian_terminal(name, T);
    inst.lipschitz = std::max(1.0, std::abs(c));
    inst.driver = [c](double, double, Span, Span, Span, Span, Span z2, OutSpan out) { out[0] = c * z2[0]; };
    ClosedFormSolution cf;
    cf.exact_y = [c, T](double t, Span w, OutSpan out) { out[0] = w[0] + c * (T - t); };
    cf.exact_z = [](double, double, Span, Span, OutSpan out) { out[0] = 1.0; };
    cf.deterministic_z = true;
    cf.discrete_y = [c](const TimeMesh& mesh, std::size_t k, std::size_t l, Span w, OutSpan out) {
      const double anchor = l > k ? mesh.time(l) : mesh.time(k + 1);
      out[0] = w[0] + c * (mesh.horizon() - anchor);
    };
    cf.discrete_z = [](const TimeMesh&, std::size_t, std::size_t, Span, OutSpan out) { out[0] = 1.0; };
    inst.closed_form = std::move(cf);
    return inst;
  }
  if (name == "GBM_terminal") {
    const double mu = detail::param(params, "mu", 0.1);
    const double sig = detail::param(params, "sigma", 0.4);
    const double x0 = detail::param(params, "x0", 1.0);
    ProblemInstance inst;
    inst.name = name;
    inst.horizon = T;
    inst.x0 = {x0};
    inst.lipschitz = std::max({1.0, std::abs(mu), std::abs(sig)});
    inst.drift = [mu](double, Span x, OutSpan out) { out[0] = mu * x[0]; };
    inst.diffusion = [sig](double, Span x, OutSpan out) { out[0] = sig * x[0]; };
    inst.free_term = [](double, Span, Span x2, OutSpan out) { out[0] = x2[0]; };
    inst.driver = [](double, double, Span, Span, Span, Span, Span, OutSpan out) { out[0] = 0.0; };
    auto state = [mu, sig, x0](double t, double w) { return x0 * std::exp((mu - 0.5 * sig * sig) * t + sig * w); };
    inst.exact_state = [state](double t, Span w, OutSpan out) { out[0] = state(t, w[0]); };
    ClosedFormSolution cf;
    cf.exact_y = [state, mu, T](double t, Span w, OutSpan out) { out[0] = state(t, w[0]) * std::exp(mu * (T - t)); };
    cf.exact_z = [state, mu, sig, T](double, double s, Span, Span w_s, OutSpan out) {
      out[0] = sig * state(s, w_s[0]) * std::exp(mu * (T - s));
    };
    inst.closed_form = std::move(cf);
    return inst;
  }
  throw InvalidArgument("catalog: unknown instance '" + name + "'");
}

/// Explicit per-path values of a scheme grid {Y^pi(t_k, t_l), Z^pi(t_k, t_l)}.
struct SchemeGrid {
  TimeMesh mesh;
  std::size_t paths = 0;
  std::vector<PathMatrix> y;  ///< index k * N + l, paths x m
  std::vector<PathMatrix> z;  ///< index k * N + l, paths x (m d)

  const PathMatrix& y_at(std::size_t k, std::size_t l) const { return y[k * mesh.cells() + l]; }
  const PathMatrix& z_at(std::size_t k, std::size_t l) const { return z[k * mesh.cells() + l]; }
};

/// Closed-form values of the backward recursion for instances that provide them.
inline SchemeGrid exact_discrete_scheme(const ProblemInstance& inst, const IncrementBatch& increments) {
  if (!inst.closed_form || !inst.closed_form->has_exact_discrete())
    throw InvalidArgument("exact_discrete_scheme: instance '" + inst.name + "' has no exact discrete solution");
  const auto& cf = *inst.closed_form;
  const auto& mesh = increments.mesh;
  const std::size_t N = mesh.cells();
  const std::size_t m = inst.dims.value;
  const std::size_t md = m * inst.dims.noise;
  const auto w = accumulate(increments);
  SchemeGrid grid{mesh, increments.paths, {}, {}};
  grid.y.resize(N * N);
  grid.z.resize(N * N);
  for (std::size_t k = 0; k < N; ++k)
    for (std::size_t l = 0; l < N; ++l) {
      PathMatrix y(increments.paths, m);
      PathMatrix z(increments.paths, md);
      for (std::size_t p = 0; p < increments.paths; ++p) {
        Span w_l(w.nodes[l].row(p).data(), increments.dim);
        cf.discrete_y(mesh, k, l, w_l, OutSpan(y.row(p).data(), m));
        cf.discrete_z(mesh, k, l, w_l, OutSpan(z.row(p).data(), md));
      }
      grid.y[k * N + l] = std::move(y);
      grid.z[k * N + l] = std::move(z);
    }
  return grid;
}

}  // namespace bsvie
