#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bsvie/condexp.hpp"
#include "bsvie/error.hpp"
#include "bsvie/model.hpp"
#include "bsvie/path_space.hpp"
#include "bsvie/quadrature.hpp"
#include "bsvie/scheme.hpp"

namespace bsvie {

/// (1/dt_k) int_{t_k v theta}^{t_{k+1} v theta} f(s) ds for f piecewise constant
/// on the inner cells, f = value_at(j) on [s_j, s_{j+1}).
inline PathMatrix interval_average(const TimeMesh& outer, const TimeMesh& inner, double theta, std::size_t k,
                                   std::size_t rows, std::size_t cols,
                                   const std::function<PathMatrix(std::size_t)>& value_at) {
  if (inner.cells() % outer.cells() != 0) throw InvalidArgument("interval_average: inner mesh is not a refinement");
  const std::size_t R = inner.cells() / outer.cells();
  PathMatrix out = PathMatrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t j = k * R; j < (k + 1) * R; ++j) {
    const double overlap = inner.time(j + 1) - std::max(inner.time(j), theta);
    if (overlap > 0.0) out += overlap * value_at(j);
  }
  return out / outer.step(k);
}

struct BsdeSystemOptions {
  Backend backend = Backend::lsmc;
  RegressionConfig regression{};
};

class BsdeSystemSolution;
inline BsdeSystemSolution solve_bsde_system(const ProblemInstance& inst, const TimeMesh& outer, std::size_t R,
                                            std::shared_ptr<const PathSpace> space,
                                            const BsdeSystemOptions& options);

/// Per-row a priori statistics.
struct RowNorms {
  double sup_y = 0.0;  ///< E[max_j |Y(t_k, s_j)|^2]
  double int_z = 0.0;  ///< E[sum_j ds_j |Z(t_k, s_j)|^2]
};

/// Solution {Y(t_k, s_j), Z(t_k, s_j)} of the BSDE system on the inner mesh.
class BsdeSystemSolution {
 public:
  BsdeSystemSolution(ProblemInstance instance, std::shared_ptr<const PathSpace> space, TimeMesh outer,
                     std::size_t refinement, BsdeSystemOptions options)
      : instance_(std::move(instance)),
        space_(std::move(space)),
        outer_(std::move(outer)),
        R_(refinement),
        options_(options) {
    const std::size_t N = outer_.cells();
    z_fns_.resize(N * N * R_);
    own_y_.resize(N * (R_ + 1));
    norms_.resize(N);
  }

  const TimeMesh& outer_mesh() const { return outer_; }
  const TimeMesh& inner_mesh() const { return space_->mesh(); }
  std::size_t refinement() const { return R_; }
  const PathSpace& space() const { return *space_; }
  const ProblemInstance& instance() const { return instance_; }
  const BsdeSystemOptions& options() const { return options_; }
  const RowNorms& norms(std::size_t k) const { return norms_[k]; }

  /// Z(t_k, s_j), j < N R
  PathMatrix z(std::size_t k, std::size_t j) const { return z_fns_[k * inner_mesh().cells() + j].evaluate(*space_); }
  /// Y(t_k, s_{kR + i}), i = 0..R
  PathMatrix own_y(std::size_t k, std::size_t i) const { return own_y_[k * (R_ + 1) + i].evaluate(*space_); }

 private:
  friend BsdeSystemSolution solve_bsde_system(const ProblemInstance&, const TimeMesh&, std::size_t,
                                              std::shared_ptr<const PathSpace>, const BsdeSystemOptions&);

  ProblemInstance instance_;
  std::shared_ptr<const PathSpace> space_;
  TimeMesh outer_;
  std::size_t R_;
  BsdeSystemOptions options_;
  std::vector<CondExpFn> z_fns_;  // k * NR + j
  std::vector<CondExpFn> own_y_;  // k * (R + 1) + i
  std::vector<RowNorms> norms_;
};

/// Backward Euler on the inner mesh for each row k = N-1..0:
///
///   Y(t_k, s) = psi(t_k, X(t_k), X(T))
///             + int_s^T g(t_k, r, X(t_k), X(r), Y(tau(r), r), Z(t_k, r), I[Z(tau(r), .)](t_k)) 1{r >= t_{k+1}} dr
///             - int_s^T Z(t_k, r) dW(r)
///
/// where I[f](t_k) is the inner-mesh average of f over cell k.
inline BsdeSystemSolution solve_bsde_system(const ProblemInstance& inst, const TimeMesh& outer, std::size_t R,
                                            std::shared_ptr<const PathSpace> space,
                                            const BsdeSystemOptions& options) {
  if (R < 1) throw InvalidArgument("bsde system: refinement R must be at least 1");
  if (!space) throw InvalidArgument("bsde system: missing path space");
  if (!is_refinement(outer, space->mesh(), R))
    throw InvalidArgument("bsde system: path space mesh is not the R-fold refinement of the outer mesh");
  if (space->state_dim() != inst.dims.state || space->noise_dim() != inst.dims.noise)
    throw InvalidArgument("bsde system: path space dimensions do not match the instance");
  if (options.backend == Backend::tree && !space->is_tree())
    throw InvalidArgument("bsde system: tree backend requires binary tree noise");
  options.regression.validate();

  BsdeSystemSolution sol(inst, space, outer, R, options);
  const std::size_t N = outer.cells();
  const std::size_t NR = N * R;
  const std::size_t M = space->paths();
  const std::size_t md = inst.dims.value * inst.dims.noise;
  const auto feature_nodes = [&](std::size_t k, std::size_t j) {
    return detail::feature_nodes(options.regression.feature_mode, k * R, j);
  };

  for (std::size_t k = N; k-- > 0;) {
    // I[Z(t_l, .)](t_k) for every completed row l > k
    std::vector<PathMatrix> cross(N);
    for (std::size_t l = k + 1; l < N; ++l)
      cross[l] = interval_average(outer, space->mesh(), 0.0, k, M, md, [&](std::size_t j) { return sol.z(l, j); });

    PathMatrix target(M, inst.dims.value);
    for (std::size_t p = 0; p < M; ++p)
      inst.free_term(outer.time(k), Span(space->states.nodes[k * R].row(p).data(), inst.dims.state),
                     Span(space->states.nodes[NR].row(p).data(), inst.dims.state),
                     OutSpan(target.row(p).data(), inst.dims.value));
    Eigen::VectorXd sup_y = target.rowwise().squaredNorm();
    Eigen::VectorXd int_z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(M));
    if ((k + 1) * R == NR)
      sol.own_y_[k * (R + 1) + R] = project_value(*space, options.backend, options.regression, NR, feature_nodes(k, NR),
                                                  target);

    for (std::size_t j = NR; j-- > 0;) {
      MartingaleFit fit;
      try {
        fit = project_step(*space, options.backend, options.regression, j, feature_nodes(k, j), target);
      } catch (const NumericalError& e) {
        throw NumericalError("bsde system (k=" + std::to_string(k) + ", inner step " + std::to_string(j) +
                             "): " + e.what());
      }
      PathMatrix values = fit.value_paths.size() ? std::move(fit.value_paths) : fit.value.evaluate(*space);
      const PathMatrix z = fit.z_paths.size() ? std::move(fit.z_paths) : fit.z.evaluate(*space);
      if (j >= (k + 1) * R) {
        const std::size_t l = j / R;
        const PathMatrix y = sol.own_y(l, j - l * R);
        detail::add_driver(inst, *space, k * R, j, y, z, cross[l], values);
      }
      if (j == (k + 1) * R) {
        sol.own_y_[k * (R + 1) + R] =
            project_value(*space, options.backend, options.regression, j, feature_nodes(k, j), values);
      } else if (j >= k * R && j < (k + 1) * R) {
        sol.own_y_[k * (R + 1) + (j - k * R)] = fit.value;
      }
      sup_y = sup_y.cwiseMax(values.rowwise().squaredNorm());
      int_z += space->mesh().step(j) * z.rowwise().squaredNorm();
      sol.z_fns_[k * NR + j] = std::move(fit.z);
      target = std::move(values);
    }
    sol.norms_[k] = {sup_y.mean(), int_z.mean()};
  }
  return sol;
}

/// Inner path space for an outer mesh: Monte Carlo or every leaf of the inner tree.
inline std::shared_ptr<const PathSpace> make_inner_space(const ProblemInstance& inst, const TimeMesh& outer,
                                                         std::size_t R, Backend backend, std::size_t paths,
                                                         NoiseKind kind, std::uint64_t seed) {
  if (R < 1) throw InvalidArgument("bsde system: refinement R must be at least 1");
  const TimeMesh inner = refine(outer, R);
  if (backend == Backend::tree) return std::make_shared<const PathSpace>(make_tree_space(inst, tree_enumerate(inner)));
  return std::make_shared<const PathSpace>(
      make_path_space(inst, generate_increments(inner, inst.dims.noise, paths, kind, seed)));
}

/// Zbar(t_k, t_l) = (1/dt_l) E_{t_l}[sum_{j in cell l} ds_j Z(t_k, s_j)], index k * N + l.
inline std::vector<CondExpFn> zbar(const BsdeSystemSolution& sol) {
  const auto& space = sol.space();
  const std::size_t N = sol.outer_mesh().cells();
  const std::size_t R = sol.refinement();
  const std::size_t md = sol.instance().dims.value * sol.instance().dims.noise;
  const auto& opt = sol.options();
  std::vector<CondExpFn> out(N * N);
  for (std::size_t k = 0; k < N; ++k)
    for (std::size_t l = 0; l < N; ++l) {
      const PathMatrix avg = interval_average(sol.outer_mesh(), sol.inner_mesh(), 0.0, l, space.paths(), md,
                                              [&](std::size_t j) { return sol.z(k, j); });
      out[k * N + l] = project_value(space, opt.backend, opt.regression, l * R,
                                     detail::feature_nodes(opt.regression.feature_mode, k * R, l * R), avg);
    }
  return out;
}

/// The BSDE system as a reference: Y(t) ~ Y(tau(t), t), Z(t, s) ~ Z(tau(t), s).
class BsdeSystemField : public ReferenceField {
 public:
  explicit BsdeSystemField(const BsdeSystemSolution& sol) : sol_(sol) {}
  std::size_t paths() const override { return sol_.space().paths(); }
  std::size_t value_dim() const override { return sol_.instance().dims.value; }
  std::size_t z_dim() const override { return value_dim() * sol_.instance().dims.noise; }
  PathMatrix y(std::size_t cell, std::size_t q) const override { return sol_.own_y(cell, q - cell * sol_.refinement()); }
  PathMatrix z(std::size_t t_cell, std::size_t, std::size_t qs) const override {
    return sol_.z(t_cell, std::min(qs, sol_.inner_mesh().cells() - 1));
  }

 private:
  const BsdeSystemSolution& sol_;
};

struct ModuliReport {
  Estimate y;
  Estimate z;
  Estimate total;
};

namespace detail {

/// sum_q w_q |a_q - b|^2 per path, b either per path or a single row.
inline void add_weighted_sq(Eigen::VectorXd& acc, double w, const PathMatrix& a, const PathMatrix& b) {
  if (b.rows() == 1) {
    acc += w * (a.rowwise() - b.row(0)).rowwise().squaredNorm();
  } else {
    acc += w * (a - b).rowwise().squaredNorm();
  }
}

/// sum_i w_i |zr_i - z|^2 per path for single-row zr_i, split as
/// sum_i w_i |zr_i - zbar|^2 + (sum_i w_i) |zbar - z|^2 to avoid cancellation.
inline Eigen::VectorXd deterministic_sq_error(const std::vector<PathMatrix>& zr, const std::vector<double>& w,
                                              double total_weight, const PathMatrix& z) {
  Eigen::RowVectorXd zbar = Eigen::RowVectorXd::Zero(z.cols());
  for (std::size_t i = 0; i < zr.size(); ++i) zbar += (w[i] / total_weight) * zr[i].row(0);
  double spread = 0.0;
  for (std::size_t i = 0; i < zr.size(); ++i) spread += w[i] * (zr[i].row(0) - zbar).squaredNorm();
  return (total_weight * (z.rowwise() - zbar).rowwise().squaredNorm()).array() + spread;
}

}  // namespace detail

/// E(Y; pi) = sum_k E int_{cell k} |Y(t) - Ybar(t_k)|^2 dt and
/// E(Z; pi) = sum_{k,l} E int int |Z(t, s) - Zbar(t_k, t_l)|^2 ds dt with
/// Ybar(t_k) = (1/dt_k) E_{t_k}[int_{cell k} Y], Zbar(t_k, t_l) = (1/(dt_k dt_l)) E_{t_l}[int int Z].
///
/// `quad` is a path space on a refinement of `outer` whose nodes are the quadrature nodes of `ref`.
inline ModuliReport regularity_moduli(const ReferenceField& ref, const TimeMesh& outer, const PathSpace& quad,
                                      Backend backend, const RegressionConfig& config) {
  const TimeMesh& fine = quad.mesh();
  if (fine.cells() % outer.cells() != 0 || !is_refinement(outer, fine, fine.cells() / outer.cells()))
    throw InvalidArgument("regularity moduli: quadrature mesh is not a refinement of the mesh");
  if (ref.paths() != quad.paths()) throw InvalidArgument("regularity moduli: reference and paths differ in size");
  const std::size_t N = outer.cells();
  const std::size_t Q = fine.cells() / N;
  const std::size_t M = quad.paths();
  const auto Mi = static_cast<Eigen::Index>(M);
  Eigen::VectorXd ey = Eigen::VectorXd::Zero(Mi);
  Eigen::VectorXd ez = Eigen::VectorXd::Zero(Mi);

  for (std::size_t k = 0; k < N; ++k) {
    const auto w = cell_weights(Q, outer.step(k));
    std::vector<PathMatrix> vals(Q + 1);
    PathMatrix avg = PathMatrix::Zero(Mi, static_cast<Eigen::Index>(ref.value_dim()));
    for (std::size_t i = 0; i <= Q; ++i) {
      vals[i] = ref.y(k, k * Q + i);
      avg += (w[i] / outer.step(k)) * vals[i];
    }
    const PathMatrix ybar = project_value(quad, backend, config, k * Q, {k * Q}, avg).evaluate(quad);
    for (std::size_t i = 0; i <= Q; ++i) detail::add_weighted_sq(ey, w[i], vals[i], ybar);
  }

  for (std::size_t k = 0; k < N; ++k) {
    const auto wt = cell_weights(Q, outer.step(k));
    for (std::size_t l = 0; l < N; ++l) {
      const auto ws = cell_weights(Q, outer.step(l));
      const double area = outer.step(k) * outer.step(l);
      std::vector<PathMatrix> vals;
      vals.reserve((Q + 1) * (Q + 1));
      PathMatrix avg;
      for (std::size_t i = 0; i <= Q; ++i)
        for (std::size_t j = 0; j <= Q; ++j) {
          vals.push_back(ref.z(k, k * Q + i, l * Q + j));
          if (avg.size() == 0) avg = PathMatrix::Zero(vals.back().rows(), vals.back().cols());
          avg += (wt[i] * ws[j] / area) * vals.back();
        }
      PathMatrix zbar_v;
      if (ref.deterministic_z()) {
        zbar_v = avg;
      } else {
        std::vector<std::size_t> nodes = l <= k ? std::vector<std::size_t>{l * Q} : std::vector<std::size_t>{k * Q, l * Q};
        zbar_v = project_value(quad, backend, config, l * Q, nodes, avg).evaluate(quad);
      }
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vals.front().rows()));
      for (std::size_t i = 0; i <= Q; ++i)
        for (std::size_t j = 0; j <= Q; ++j) detail::add_weighted_sq(acc, wt[i] * ws[j], vals[i * (Q + 1) + j], zbar_v);
      if (acc.size() == 1) {
        ez.array() += acc(0);
      } else {
        ez += acc;
      }
    }
  }
  return {estimate(ey), estimate(ez), estimate(ey + ez)};
}

/// Closed-form moduli on a Q-fold refinement of `outer`, using Brownian values from `fine`.
inline ModuliReport regularity_moduli(const ProblemInstance& inst, const TimeMesh& outer, const IncrementBatch& fine,
                                      Backend backend = Backend::lsmc, const RegressionConfig& config = {}) {
  if (!inst.closed_form) throw InvalidArgument("regularity moduli: no reference available for '" + inst.name + "'");
  PathSpace quad = make_path_space(inst, fine);
  if (backend == Backend::tree) {
    if (fine.kind != NoiseKind::binary || fine.mesh.cells() > TreeEnsemble::default_cap)
      throw InvalidArgument("regularity moduli: tree backend requires a full binary tree");
    quad = make_tree_space(inst, tree_enumerate(fine.mesh));
  }
  ClosedFormField field(inst, accumulate(quad.increments));
  return regularity_moduli(field, outer, quad, backend, config);
}

/// Moduli with the BSDE system as a proxy reference on its own inner mesh.
inline ModuliReport regularity_moduli(const BsdeSystemSolution& sol) {
  return regularity_moduli(BsdeSystemField(sol), sol.outer_mesh(), sol.space(), sol.options().backend,
                           sol.options().regression);
}

/// E int |Y(t) - Y(tau(t), t)|^2 dt + E int int |Z(t, s) - Z(tau(t), s)|^2 ds dt,
/// quadrature on the inner mesh (Simpson or trapezoid in t, left points in s).
inline ModuliReport bsde_approx_error(const BsdeSystemSolution& sol, const ReferenceField& ref) {
  const std::size_t N = sol.outer_mesh().cells();
  const std::size_t R = sol.refinement();
  const std::size_t NR = N * R;
  const auto& inner = sol.inner_mesh();
  if (ref.paths() != sol.space().paths()) throw InvalidArgument("bsde_approx_error: reference and paths differ");
  const auto Mi = static_cast<Eigen::Index>(ref.paths());
  Eigen::VectorXd ey = Eigen::VectorXd::Zero(Mi);
  Eigen::VectorXd ez = Eigen::VectorXd::Zero(Mi);
  for (std::size_t k = 0; k < N; ++k) {
    const auto w = cell_weights(R, sol.outer_mesh().step(k));
    for (std::size_t i = 0; i <= R; ++i) detail::add_weighted_sq(ey, w[i], ref.y(k, k * R + i), sol.own_y(k, i));
    for (std::size_t j = 0; j < NR; ++j) {
      const PathMatrix zs = sol.z(k, j);
      const double h = inner.step(j);
      if (ref.deterministic_z()) {
        std::vector<PathMatrix> zr;
        for (std::size_t i = 0; i <= R; ++i) zr.push_back(ref.z(k, k * R + i, j));
        ez += h * detail::deterministic_sq_error(zr, w, sol.outer_mesh().step(k), zs);
      } else {
        for (std::size_t i = 0; i <= R; ++i) detail::add_weighted_sq(ez, h * w[i], ref.z(k, k * R + i, j), zs);
      }
    }
  }
  return {estimate(ey), estimate(ez), estimate(ey + ez)};
}

inline ModuliReport bsde_approx_error(const BsdeSystemSolution& sol) {
  const auto& inst = sol.instance();
  if (!inst.closed_form) throw InvalidArgument("bsde_approx_error: no reference available for '" + inst.name + "'");
  return bsde_approx_error(sol, ClosedFormField(inst, accumulate(sol.space().increments)));
}

}  // namespace bsvie
