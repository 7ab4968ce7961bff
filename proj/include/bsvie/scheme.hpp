#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "bsvie/condexp.hpp"
#include "bsvie/error.hpp"
#include "bsvie/model.hpp"
#include "bsvie/path_space.hpp"

namespace bsvie {

/// Called whenever row `row` reads a value produced by row `source_row`.
using AccessObserver = std::function<void(std::size_t row, std::size_t col, std::size_t source_row,
                                          std::size_t source_col)>;

struct SolveOptions {
  Backend backend = Backend::lsmc;
  RegressionConfig regression{};
  /// When false the driver receives NaN for Z^pi(t_l, t_k).
  bool retain_cross_z = true;
  AccessObserver observer;
};

class SchemeSolution;
inline SchemeSolution solve_bsvie(const ProblemInstance& inst, std::shared_ptr<const PathSpace> space,
                                  const SolveOptions& options);

/// Per-cell summary of one (k, l) entry of the scheme.
struct ColumnStats {
  double mean_y = 0.0;
  double mean_z = 0.0;
  double second_moment_y = 0.0;
  double second_moment_z = 0.0;
};

namespace detail {

inline ColumnStats column_stats(const PathMatrix& y, const PathMatrix& z) {
  const double M = static_cast<double>(y.rows());
  ColumnStats s;
  s.mean_y = y.col(0).sum() / M;
  s.mean_z = z.col(0).sum() / M;
  s.second_moment_y = y.squaredNorm() / M;
  s.second_moment_z = z.squaredNorm() / M;
  return s;
}

/// Regression states for E_{t_l}[.] inside row k.
inline std::vector<std::size_t> feature_nodes(FeatureMode mode, std::size_t k, std::size_t l) {
  if (mode == FeatureMode::state_pair && l > k) return {k, l};
  return {l};
}

inline PathMatrix terminal_values(const ProblemInstance& inst, const PathSpace& space, std::size_t k) {
  const std::size_t n = inst.dims.state;
  const std::size_t m = inst.dims.value;
  const std::size_t N = space.mesh().cells();
  PathMatrix out(space.paths(), m);
  const double t = space.mesh().time(k);
  for (std::size_t p = 0; p < space.paths(); ++p) {
    inst.free_term(t, Span(space.states.nodes[k].row(p).data(), n), Span(space.states.nodes[N].row(p).data(), n),
                   OutSpan(out.row(p).data(), m));
  }
  return out;
}

/// values += dt g(t_k, t_l, X_k, X_l, y, z1, z2) path by path.
inline void add_driver(const ProblemInstance& inst, const PathSpace& space, std::size_t k, std::size_t l,
                       const PathMatrix& y, const PathMatrix& z1, const PathMatrix& z2, PathMatrix& values) {
  const std::size_t n = inst.dims.state;
  const std::size_t m = inst.dims.value;
  const std::size_t md = m * inst.dims.noise;
  const double tk = space.mesh().time(k);
  const double tl = space.mesh().time(l);
  const double dt = space.mesh().step(l);
  parallel_for(space.paths(), [&](std::size_t lo, std::size_t hi) {
    std::vector<double> g(m);
    for (std::size_t p = lo; p < hi; ++p) {
      inst.driver(tk, tl, Span(space.states.nodes[k].row(p).data(), n), Span(space.states.nodes[l].row(p).data(), n),
                  Span(y.row(p).data(), m), Span(z1.row(p).data(), md), Span(z2.row(p).data(), md), g);
      for (std::size_t i = 0; i < m; ++i) {
        if (!std::isfinite(g[i]))
          throw NumericalError("scheme: non-finite driver at (k=" + std::to_string(k) + ", l=" + std::to_string(l) +
                               "), path " + std::to_string(p));
        values(p, i) += dt * g[i];
      }
    }
  });
}

}  // namespace detail

/// The grid {Y^pi(t_k, t_l), Z^pi(t_k, t_l)} of the explicit backward scheme.
///
/// Only fitted conditional expectations are stored (regression coefficients
/// or tree node tables); per-path values are rebuilt on demand from them.
class SchemeSolution {
 public:
  SchemeSolution(ProblemInstance instance, std::shared_ptr<const PathSpace> space, Backend backend,
                 bool retain_cross_z)
      : instance_(std::move(instance)), space_(std::move(space)), backend_(backend), retain_cross_z_(retain_cross_z) {
    const std::size_t N = mesh().cells();
    value_fns_.resize(N * N);
    z_fns_.resize(N * N);
    stats_.resize(N * N);
  }

  const TimeMesh& mesh() const { return space_->mesh(); }
  const PathSpace& space() const { return *space_; }
  std::shared_ptr<const PathSpace> space_ptr() const { return space_; }
  const ProblemInstance& instance() const { return instance_; }
  Backend backend() const { return backend_; }

  /// E_{t_l}[Y^pi(t_k, t_{l+1})]
  const CondExpFn& value_fn(std::size_t k, std::size_t l) const { return value_fns_[index(k, l)]; }
  /// Z^pi(t_k, t_l)
  const CondExpFn& z_fn(std::size_t k, std::size_t l) const { return z_fns_[index(k, l)]; }
  const ColumnStats& stats(std::size_t k, std::size_t l) const { return stats_[index(k, l)]; }

  PathMatrix terminal(std::size_t k) const { return detail::terminal_values(instance_, *space_, k); }
  PathMatrix diagonal(std::size_t k) const { return value_fn(k, k).evaluate(*space_); }
  PathMatrix z(std::size_t k, std::size_t l) const { return z_fn(k, l).evaluate(*space_); }

  PathMatrix y(std::size_t k, std::size_t l) const {
    if (l == mesh().cells()) return terminal(k);
    PathMatrix v = value_fn(k, l).evaluate(*space_);
    if (k < l) detail::add_driver(instance_, *space_, k, l, diagonal(l), z(k, l), cross_z(l, k), v);
    return v;
  }

  SchemeGrid to_grid() const {
    const std::size_t N = mesh().cells();
    SchemeGrid grid{mesh(), space_->paths(), {}, {}};
    grid.y.resize(N * N);
    grid.z.resize(N * N);
    for (std::size_t k = 0; k < N; ++k)
      for (std::size_t l = 0; l < N; ++l) {
        grid.y[k * N + l] = y(k, l);
        grid.z[k * N + l] = z(k, l);
      }
    return grid;
  }

 private:
  friend SchemeSolution solve_bsvie(const ProblemInstance&, std::shared_ptr<const PathSpace>, const SolveOptions&);

  std::size_t index(std::size_t k, std::size_t l) const { return k * mesh().cells() + l; }

  PathMatrix cross_z(std::size_t row, std::size_t col) const {
    if (retain_cross_z_) return z(row, col);
    return PathMatrix::Constant(static_cast<Eigen::Index>(space_->paths()),
                                static_cast<Eigen::Index>(instance_.dims.value * instance_.dims.noise),
                                std::numeric_limits<double>::quiet_NaN());
  }

  ProblemInstance instance_;
  std::shared_ptr<const PathSpace> space_;
  Backend backend_;
  bool retain_cross_z_;
  std::vector<CondExpFn> value_fns_;
  std::vector<CondExpFn> z_fns_;
  std::vector<ColumnStats> stats_;
};

/// Explicit backward Euler-Maruyama recursion, rows k = N-1..0, columns l = N-1..0:
///
///   Z^pi(t_k, t_l) = (1/dt_l) E_{t_l}[Y^pi(t_k, t_{l+1}) dW_l^T]
///   Y^pi(t_k, t_l) = E_{t_l}[Y^pi(t_k, t_{l+1})]
///                    + dt_l g(t_k, t_l, X_k, X_l, Y^pi(t_l, t_l), Z^pi(t_k, t_l), Z^pi(t_l, t_k)) 1{k < l}
///
/// with Y^pi(t_k, t_N) = psi(t_k, X_k, X_N). Row k only reads rows l > k.
inline SchemeSolution solve_bsvie(const ProblemInstance& inst, std::shared_ptr<const PathSpace> space,
                                  const SolveOptions& options) {
  if (!space) throw InvalidArgument("solve_bsvie: missing path space");
  if (std::abs(space->mesh().horizon() - inst.horizon) > 1e-12 * inst.horizon)
    throw InvalidArgument("solve_bsvie: mesh horizon differs from the instance horizon");
  if (space->state_dim() != inst.dims.state || space->noise_dim() != inst.dims.noise)
    throw InvalidArgument("solve_bsvie: path space dimensions do not match the instance");
  if (options.backend == Backend::tree && !space->is_tree())
    throw InvalidArgument("solve_bsvie: tree backend requires binary tree noise");
  options.regression.validate();

  SchemeSolution sol(inst, space, options.backend, options.retain_cross_z);
  const std::size_t N = space->mesh().cells();
  std::vector<PathMatrix> diagonal(N);

  for (std::size_t k = N; k-- > 0;) {
    PathMatrix target = detail::terminal_values(inst, *space, k);
    for (std::size_t l = N; l-- > 0;) {
      MartingaleFit fit;
      try {
        fit = project_step(*space, options.backend, options.regression, l,
                           detail::feature_nodes(options.regression.feature_mode, k, l), target);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string("scheme (k=") + std::to_string(k) + ", l=" + std::to_string(l) +
                             "): " + e.what());
      }
      PathMatrix values = fit.value_paths.size() ? std::move(fit.value_paths) : fit.value.evaluate(*space);
      PathMatrix z = fit.z_paths.size() ? std::move(fit.z_paths) : fit.z.evaluate(*space);
      if (k < l) {
        if (options.observer) {
          options.observer(k, l, l, l);
          if (options.retain_cross_z) options.observer(k, l, l, k);
        }
        detail::add_driver(inst, *space, k, l, diagonal[l], z, sol.cross_z(l, k), values);
      }
      if (k == l) diagonal[k] = values;
      sol.stats_[sol.index(k, l)] = detail::column_stats(values, z);
      sol.value_fns_[sol.index(k, l)] = std::move(fit.value);
      sol.z_fns_[sol.index(k, l)] = std::move(fit.z);
      target = std::move(values);
    }
  }
  return sol;
}

/// Convenience overload: builds the path space from increments on the solver mesh.
inline SchemeSolution solve_bsvie(const ProblemInstance& inst, const IncrementBatch& increments,
                                  const SolveOptions& options) {
  return solve_bsvie(inst, std::make_shared<const PathSpace>(make_path_space(inst, increments)), options);
}

/// Tree-mode convenience overload over every sign path of `mesh`.
inline SchemeSolution solve_bsvie_tree(const ProblemInstance& inst, const TimeMesh& mesh) {
  SolveOptions options;
  options.backend = Backend::tree;
  return solve_bsvie(inst, std::make_shared<const PathSpace>(make_tree_space(inst, tree_enumerate(mesh))), options);
}

/// max over k and paths of |Y(t_k, t_k) - E[Y(t_k, t_k)] - sum_{l<k} Z(t_k, t_l) dW_l|.
inline double msolution_statistic(const SchemeSolution& sol) {
  const auto& space = sol.space();
  const std::size_t N = sol.mesh().cells();
  const std::size_t m = sol.instance().dims.value;
  const std::size_t d = sol.instance().dims.noise;
  double worst = 0.0;
  for (std::size_t k = 0; k < N; ++k) {
    PathMatrix resid = sol.diagonal(k);
    const Eigen::RowVectorXd mean = resid.colwise().mean();
    resid.rowwise() -= mean;
    for (std::size_t l = 0; l < k; ++l) {
      const PathMatrix z = sol.z(k, l);
      const PathMatrix& dw = space.increments.steps[l];
      for (std::size_t p = 0; p < space.paths(); ++p)
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < d; ++j) resid(p, i) -= z(p, i * d + j) * dw(p, j);
    }
    worst = std::max(worst, resid.cwiseAbs().maxCoeff());
  }
  return worst;
}

/// M-solution identity residual; exact only for one-level binary tree steps.
inline double msolution_residual(const SchemeSolution& sol) {
  if (sol.backend() != Backend::tree) throw InvalidArgument("msolution_residual: identity only exact in tree mode");
  const auto& layout = *sol.space().tree;
  for (std::size_t j = 0; j < layout.level_of_node.size(); ++j)
    if (layout.level_of_node[j] != j)
      throw InvalidArgument("msolution_residual: identity only exact for one tree level per step");
  return msolution_statistic(sol);
}

/// Independent oracle: evaluates the recursion by summing over all
/// descendant leaves at every node, with its own forward simulation.
inline SchemeGrid brute_force_tree(const ProblemInstance& inst, const TimeMesh& mesh, std::size_t max_cells = 10) {
  const std::size_t N = mesh.cells();
  if (N > max_cells) throw InvalidArgument("brute_force_tree: N too large");
  if (inst.dims.noise != 1) throw InvalidArgument("brute_force_tree: scalar noise only");
  const std::size_t n = inst.dims.state;
  const std::size_t m = inst.dims.value;
  const std::size_t leaves = std::size_t{1} << N;

  // dw[leaf][k], x[leaf][k][i]
  std::vector<std::vector<double>> dw(leaves, std::vector<double>(N));
  std::vector<std::vector<std::vector<double>>> x(leaves, std::vector<std::vector<double>>(N + 1));
  for (std::size_t leaf = 0; leaf < leaves; ++leaf) {
    x[leaf][0] = inst.x0;
    std::vector<double> b(n), sig(n);
    for (std::size_t k = 0; k < N; ++k) {
      const bool down = ((leaf >> (N - 1 - k)) & 1U) != 0;
      dw[leaf][k] = (down ? -1.0 : 1.0) * std::sqrt(mesh.step(k));
      inst.drift(mesh.time(k), x[leaf][k], b);
      inst.diffusion(mesh.time(k), x[leaf][k], sig);
      x[leaf][k + 1].resize(n);
      for (std::size_t i = 0; i < n; ++i)
        x[leaf][k + 1][i] = x[leaf][k][i] + b[i] * mesh.step(k) + sig[i] * dw[leaf][k];
    }
  }

  // ytab[k][l][node * m + i], ztab likewise
  std::vector<std::vector<std::vector<double>>> ytab(N, std::vector<std::vector<double>>(N));
  std::vector<std::vector<std::vector<double>>> ztab(N, std::vector<std::vector<double>>(N));
  std::vector<double> psi(m), g(m);
  for (std::size_t k = N; k-- > 0;) {
    for (std::size_t l = N; l-- > 0;) {
      const std::size_t nodes = std::size_t{1} << l;
      const std::size_t span = leaves >> l;
      auto& yl = ytab[k][l];
      auto& zl = ztab[k][l];
      yl.assign(nodes * m, 0.0);
      zl.assign(nodes * m, 0.0);
      for (std::size_t q = 0; q < nodes; ++q) {
        for (std::size_t leaf = q * span; leaf < (q + 1) * span; ++leaf) {
          for (std::size_t i = 0; i < m; ++i) {
            double next;
            if (l + 1 == N) {
              inst.free_term(mesh.time(k), x[leaf][k], x[leaf][N], psi);
              next = psi[i];
            } else {
              next = ytab[k][l + 1][(leaf >> (N - l - 1)) * m + i];
            }
            yl[q * m + i] += next;
            zl[q * m + i] += next * dw[leaf][l];
          }
        }
        for (std::size_t i = 0; i < m; ++i) {
          yl[q * m + i] /= static_cast<double>(span);
          zl[q * m + i] /= static_cast<double>(span) * mesh.step(l);
        }
        if (k < l) {
          const std::size_t rep = q * span;
          const std::size_t qk = q >> (l - k);
          inst.driver(mesh.time(k), mesh.time(l), x[rep][k], x[rep][l], Span(&ytab[l][l][q * m], m),
                      Span(&zl[q * m], m), Span(&ztab[l][k][qk * m], m), g);
          for (std::size_t i = 0; i < m; ++i) yl[q * m + i] += mesh.step(l) * g[i];
        }
      }
    }
  }

  SchemeGrid grid{mesh, leaves, {}, {}};
  grid.y.resize(N * N);
  grid.z.resize(N * N);
  for (std::size_t k = 0; k < N; ++k)
    for (std::size_t l = 0; l < N; ++l) {
      PathMatrix y(leaves, m), z(leaves, m);
      for (std::size_t leaf = 0; leaf < leaves; ++leaf)
        for (std::size_t i = 0; i < m; ++i) {
          y(leaf, i) = ytab[k][l][(leaf >> (N - l)) * m + i];
          z(leaf, i) = ztab[k][l][(leaf >> (N - l)) * m + i];
        }
      grid.y[k * N + l] = std::move(y);
      grid.z[k * N + l] = std::move(z);
    }
  return grid;
}

/// Largest absolute difference between two grids on the same paths.
inline double max_grid_difference(const SchemeGrid& a, const SchemeGrid& b) {
  if (a.y.size() != b.y.size() || a.paths != b.paths) throw InvalidArgument("grid comparison: shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.y.size(); ++i) {
    worst = std::max(worst, (a.y[i] - b.y[i]).cwiseAbs().maxCoeff());
    worst = std::max(worst, (a.z[i] - b.z[i]).cwiseAbs().maxCoeff());
  }
  return worst;
}

/// CSV rows (k, l, mean Y, mean Z, second moments) for every scheme cell.
inline void write_solution_csv(std::ostream& os, const SchemeSolution& sol) {
  os << "k,l,mean_y,mean_z,second_moment_y,second_moment_z\n";
  char buf[160];
  const std::size_t N = sol.mesh().cells();
  for (std::size_t k = 0; k < N; ++k)
    for (std::size_t l = 0; l < N; ++l) {
      const auto& s = sol.stats(k, l);
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.12e,%.12e,%.12e,%.12e\n", k, l, s.mean_y, s.mean_z,
                    s.second_moment_y, s.second_moment_z);
      os << buf;
    }
}

}  // namespace bsvie
