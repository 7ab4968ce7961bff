#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bsvie/error.hpp"
#include "bsvie/parallel.hpp"
#include "bsvie/path_space.hpp"
#include "bsvie/types.hpp"

namespace bsvie {

enum class Backend { tree, lsmc };

inline std::string to_string(Backend b) { return b == Backend::tree ? "tree" : "lsmc"; }

/// Which states feed a regression at column l of row k.
enum class FeatureMode {
  state_now,  ///< X(t_l) only
  state_pair  ///< X(t_l) for l <= k, (X(t_k), X(t_l)) for l > k
};

struct RegressionConfig {
  int degree = 3;
  FeatureMode feature_mode = FeatureMode::state_pair;
  double ridge = 1e-10;
  std::size_t min_paths_per_coeff = 50;

  void validate() const {
    if (degree < 0) throw InvalidArgument("regression: degree must be >= 0");
    if (!(ridge >= 0.0)) throw InvalidArgument("regression: ridge must be >= 0");
  }
};

/// Tensor monomials of total degree <= degree, graded lexicographic order.
class PolynomialBasis {
 public:
  PolynomialBasis() : PolynomialBasis(0, 0) {}
  PolynomialBasis(std::size_t dim, int degree) : dim_(dim), degree_(degree) {
    std::vector<int> e(dim, 0);
    for (int total = 0; total <= degree; ++total) enumerate(e, 0, total);
  }

  std::size_t dim() const { return dim_; }
  int degree() const { return degree_; }
  std::size_t size() const { return exponents_.size(); }
  const std::vector<std::vector<int>>& exponents() const { return exponents_; }

  void evaluate(std::span<const double> x, std::span<double> out) const {
    // powers[i * (degree + 1) + e] = x_i^e
    double powers[64];
    std::vector<double> heap;
    double* pw = powers;
    const std::size_t stride = static_cast<std::size_t>(degree_) + 1;
    if (dim_ * stride > 64) {
      heap.resize(dim_ * stride);
      pw = heap.data();
    }
    for (std::size_t i = 0; i < dim_; ++i) {
      pw[i * stride] = 1.0;
      for (std::size_t e = 1; e < stride; ++e) pw[i * stride + e] = pw[i * stride + e - 1] * x[i];
    }
    for (std::size_t b = 0; b < exponents_.size(); ++b) {
      double v = 1.0;
      for (std::size_t i = 0; i < dim_; ++i) v *= pw[i * stride + static_cast<std::size_t>(exponents_[b][i])];
      out[b] = v;
    }
  }

 private:
  void enumerate(std::vector<int>& e, std::size_t pos, int remaining) {
    if (pos + 1 >= dim_) {
      if (dim_ == 0) {
        if (remaining == 0) exponents_.push_back(e);
        return;
      }
      e[pos] = remaining;
      exponents_.push_back(e);
      e[pos] = 0;
      return;
    }
    for (int v = remaining; v >= 0; --v) {
      e[pos] = v;
      enumerate(e, pos + 1, remaining - v);
    }
    e[pos] = 0;
  }

  std::size_t dim_;
  int degree_;
  std::vector<std::vector<int>> exponents_;
};

/// Standardization of raw features; columns constant across paths are dropped.
struct FeatureMap {
  std::vector<std::size_t> active;
  std::vector<double> shift;
  std::vector<double> scale;

  static FeatureMap fit(const PathMatrix& raw) {
    FeatureMap map;
    const double M = static_cast<double>(raw.rows());
    for (Eigen::Index c = 0; c < raw.cols(); ++c) {
      const double mean = raw.col(c).sum() / M;
      const double var = (raw.col(c).array() - mean).square().sum() / M;
      const double sd = std::sqrt(var);
      if (sd > 1e-12 * std::max(1.0, std::abs(mean))) {
        map.active.push_back(static_cast<std::size_t>(c));
        map.shift.push_back(mean);
        map.scale.push_back(1.0 / sd);
      }
    }
    return map;
  }

  std::size_t dim() const { return active.size(); }

  void apply(const double* raw_row, double* out) const {
    for (std::size_t i = 0; i < active.size(); ++i) out[i] = (raw_row[active[i]] - shift[i]) * scale[i];
  }
};

/// A fitted conditional expectation E_{t_l}[.].
///
/// The lsmc form is an affine combination of polynomial features of the
/// states at `nodes`; the tree form is a node table at one tree level.
class CondExpFn {
 public:
  CondExpFn() = default;

  static CondExpFn regression(std::vector<std::size_t> nodes, std::size_t raw_dim, FeatureMap map,
                              PolynomialBasis basis, Eigen::MatrixXd coef) {
    CondExpFn fn;
    fn.backend_ = Backend::lsmc;
    fn.nodes_ = std::move(nodes);
    fn.raw_dim_ = raw_dim;
    fn.map_ = std::move(map);
    fn.basis_ = std::move(basis);
    fn.coef_ = std::move(coef);
    return fn;
  }

  static CondExpFn tree_table(std::size_t level, PathMatrix table) {
    CondExpFn fn;
    fn.backend_ = Backend::tree;
    fn.level_ = level;
    fn.table_ = std::move(table);
    return fn;
  }

  Backend backend() const { return backend_; }
  std::size_t outputs() const {
    return backend_ == Backend::lsmc ? static_cast<std::size_t>(coef_.cols()) : static_cast<std::size_t>(table_.cols());
  }
  const std::vector<std::size_t>& nodes() const { return nodes_; }
  const Eigen::MatrixXd& coefficients() const { return coef_; }
  const PolynomialBasis& basis() const { return basis_; }
  std::size_t level() const { return level_; }
  const PathMatrix& table() const { return table_; }

  /// Evaluation at raw feature vectors (lsmc only).
  PathMatrix evaluate_features(const PathMatrix& raw) const {
    if (backend_ != Backend::lsmc) throw InvalidArgument("eval_condexp: tree functions are evaluated per path");
    if (static_cast<std::size_t>(raw.cols()) != raw_dim_)
      throw InvalidArgument("eval_condexp: state dimension " + std::to_string(raw.cols()) + " does not match " +
                            std::to_string(raw_dim_));
    PathMatrix out(raw.rows(), coef_.cols());
    parallel_for(static_cast<std::size_t>(raw.rows()), [&](std::size_t lo, std::size_t hi) {
      std::vector<double> z(map_.dim()), phi(basis_.size());
      for (std::size_t p = lo; p < hi; ++p) {
        map_.apply(raw.row(static_cast<Eigen::Index>(p)).data(), z.data());
        basis_.evaluate(z, phi);
        const Eigen::Map<const Eigen::RowVectorXd> row(phi.data(), static_cast<Eigen::Index>(phi.size()));
        out.row(static_cast<Eigen::Index>(p)) = row * coef_;
      }
    });
    return out;
  }

  /// Per-path values on a path space.
  PathMatrix evaluate(const PathSpace& space) const {
    if (backend_ == Backend::lsmc) return evaluate_features(gather_features(space, nodes_));
    if (!space.tree) throw InvalidArgument("CondExpFn: tree function evaluated on a Monte Carlo space");
    const std::size_t shift = space.tree->depth - level_;
    PathMatrix out(space.paths(), table_.cols());
    for (std::size_t p = 0; p < space.paths(); ++p) out.row(static_cast<Eigen::Index>(p)) = table_.row(p >> shift);
    return out;
  }

 private:
  Backend backend_ = Backend::lsmc;
  std::vector<std::size_t> nodes_;
  std::size_t raw_dim_ = 0;
  FeatureMap map_;
  PolynomialBasis basis_;
  Eigen::MatrixXd coef_;
  std::size_t level_ = 0;
  PathMatrix table_;
};

// ---------------------------------------------------------------------------
// Tree backend
// ---------------------------------------------------------------------------

/// Node values at `level` from the values of its 2^{level+1} children.
inline PathMatrix tree_condexp(std::size_t level, const PathMatrix& children) {
  const auto nodes = static_cast<Eigen::Index>(std::size_t{1} << level);
  if (children.rows() != 2 * nodes)
    throw InvalidArgument("tree_condexp: expected " + std::to_string(2 * nodes) + " child values, got " +
                          std::to_string(children.rows()));
  PathMatrix out(nodes, children.cols());
  for (Eigen::Index q = 0; q < nodes; ++q) out.row(q) = 0.5 * (children.row(2 * q) + children.row(2 * q + 1));
  return out;
}

/// (1/dt) E_{t_l}[child * dW_l] under dW_l = +-sqrt(dt).
inline PathMatrix tree_cond_z(std::size_t level, const PathMatrix& children, double dt) {
  if (!(dt > 0.0)) throw InvalidArgument("tree_cond_z: dt must be positive");
  const auto nodes = static_cast<Eigen::Index>(std::size_t{1} << level);
  if (children.rows() != 2 * nodes)
    throw InvalidArgument("tree_cond_z: expected " + std::to_string(2 * nodes) + " child values, got " +
                          std::to_string(children.rows()));
  const double w = 1.0 / (2.0 * std::sqrt(dt));
  PathMatrix out(nodes, children.cols());
  for (Eigen::Index q = 0; q < nodes; ++q) out.row(q) = w * (children.row(2 * q) - children.row(2 * q + 1));
  return out;
}

namespace detail {

/// Mean of per-leaf values over each node at `level`.
inline PathMatrix leaf_average(const PathMatrix& leaves, std::size_t depth, std::size_t level) {
  const std::size_t group = std::size_t{1} << (depth - level);
  const auto nodes = static_cast<Eigen::Index>(std::size_t{1} << level);
  PathMatrix out(nodes, leaves.cols());
  for (Eigen::Index q = 0; q < nodes; ++q)
    out.row(q) = leaves.middleRows(q * static_cast<Eigen::Index>(group), static_cast<Eigen::Index>(group))
                     .colwise()
                     .sum() /
                 static_cast<double>(group);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Least-squares Monte Carlo backend
// ---------------------------------------------------------------------------

namespace detail {

inline void require_finite(const PathMatrix& targets, const char* what) {
  if (!targets.allFinite()) throw NumericalError(std::string(what) + ": non-finite regression targets");
}

/// argmin |A b - y|^2 + ridge |b|^2 for every column of y.
///
/// Tall-skinny QR: each block of rows of [A | y] is reduced to its R factor,
/// the stacked factors (plus sqrt(ridge) I rows) are solved by pivoted QR.
inline Eigen::MatrixXd solve_ridge_least_squares(const Eigen::MatrixXd& design, const Eigen::MatrixXd& targets,
                                                 double ridge) {
  const Eigen::Index p = design.cols();
  const Eigen::Index t = targets.cols();
  const Eigen::Index M = design.rows();
  const Eigen::Index w = p + t;
  constexpr Eigen::Index block = 2048;
  const Eigen::Index blocks = (M + block - 1) / block;
  Eigen::MatrixXd stacked = Eigen::MatrixXd::Zero(blocks * w + p, w);
  parallel_for(
      static_cast<std::size_t>(blocks),
      [&](std::size_t lo, std::size_t hi) {
        for (std::size_t b = lo; b < hi; ++b) {
          const Eigen::Index r0 = static_cast<Eigen::Index>(b) * block;
          const Eigen::Index rows = std::min(block, M - r0);
          Eigen::MatrixXd aug(rows, w);
          aug.leftCols(p) = design.middleRows(r0, rows);
          aug.rightCols(t) = targets.middleRows(r0, rows);
          Eigen::HouseholderQR<Eigen::MatrixXd> qr(aug);
          const Eigen::Index keep = std::min(rows, w);
          stacked.block(static_cast<Eigen::Index>(b) * w, 0, keep, w) =
              qr.matrixQR().topRows(keep).template triangularView<Eigen::Upper>();
        }
      },
      1);
  stacked.bottomLeftCorner(p, p) = std::sqrt(ridge) * Eigen::MatrixXd::Identity(p, p);
  const Eigen::MatrixXd A = stacked.leftCols(p);
  const Eigen::MatrixXd B = stacked.rightCols(t);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  Eigen::MatrixXd coef;
  if (qr.rank() == p) {
    coef = qr.solve(B);
  } else {
    // Rank-deficient even with the ridge rows: regularized normal equations.
    const double shift = ridge > 0.0 ? ridge : 1e-12 * std::max(1.0, design.squaredNorm() / double(p));
    Eigen::MatrixXd gram = design.transpose() * design;
    gram.diagonal().array() += shift;
    coef = gram.ldlt().solve(design.transpose() * targets);
  }
  if (!coef.allFinite()) throw NumericalError("least squares: non-finite coefficients");
  return coef;
}

inline void check_path_count(const RegressionConfig& config, std::size_t paths, std::size_t columns) {
  if (paths < config.min_paths_per_coeff * columns)
    throw NumericalError("least squares: " + std::to_string(paths) + " paths for " + std::to_string(columns) +
                         " coefficients (need " + std::to_string(config.min_paths_per_coeff) + " per coefficient)");
}

}  // namespace detail

/// Projection of targets onto polynomials of the features.
inline CondExpFn fit_lsmc(const RegressionConfig& config, const PathMatrix& features, const PathMatrix& targets,
                          std::vector<std::size_t> nodes = {}) {
  config.validate();
  if (features.rows() != targets.rows()) throw InvalidArgument("fit_lsmc: features and targets differ in length");
  detail::require_finite(targets, "fit_lsmc");
  auto map = FeatureMap::fit(features);
  PolynomialBasis basis(map.dim(), config.degree);
  const auto M = static_cast<std::size_t>(features.rows());
  detail::check_path_count(config, M, basis.size());
  Eigen::MatrixXd design(features.rows(), static_cast<Eigen::Index>(basis.size()));
  parallel_for(M, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> z(map.dim()), phi(basis.size());
    for (std::size_t p = lo; p < hi; ++p) {
      map.apply(features.row(static_cast<Eigen::Index>(p)).data(), z.data());
      basis.evaluate(z, phi);
      for (std::size_t b = 0; b < phi.size(); ++b) design(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(b)) = phi[b];
    }
  });
  auto coef = detail::solve_ridge_least_squares(design, targets, config.ridge);
  return CondExpFn::regression(std::move(nodes), static_cast<std::size_t>(features.cols()), std::move(map),
                               std::move(basis), std::move(coef));
}

/// Value and martingale parts of one backward step.
struct MartingaleFit {
  CondExpFn value;  ///< E_{t_l}[Y]
  CondExpFn z;      ///< (1/dt) E_{t_l}[Y dW^T], m x d row-major
  /// In-sample values on the fitted paths; empty for the tree backend.
  PathMatrix value_paths;
  PathMatrix z_paths;
};

/// Joint regression of Y on {phi(x)} and {phi(x) dW_j / sqrt(dt)}.
///
/// With dW independent of x, mean zero and covariance dt I, the phi block
/// projects E[Y | x] and the dW blocks project E[Y dW_j | x] / sqrt(dt).
inline MartingaleFit fit_martingale_lsmc(const RegressionConfig& config, const PathMatrix& features,
                                         const PathMatrix& increments, double dt, const PathMatrix& targets,
                                         std::vector<std::size_t> nodes = {}) {
  config.validate();
  if (features.rows() != targets.rows() || increments.rows() != targets.rows())
    throw InvalidArgument("fit_martingale_lsmc: inputs differ in length");
  if (!(dt > 0.0)) throw InvalidArgument("fit_martingale_lsmc: dt must be positive");
  detail::require_finite(targets, "fit_martingale_lsmc");
  auto map = FeatureMap::fit(features);
  PolynomialBasis basis(map.dim(), config.degree);
  const std::size_t P = basis.size();
  const auto d = static_cast<std::size_t>(increments.cols());
  const auto M = static_cast<std::size_t>(features.rows());
  detail::check_path_count(config, M, P * (1 + d));
  const double inv_sd = 1.0 / std::sqrt(dt);
  Eigen::MatrixXd design(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(P * (1 + d)));
  parallel_for(M, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> z(map.dim()), phi(P);
    for (std::size_t p = lo; p < hi; ++p) {
      const auto r = static_cast<Eigen::Index>(p);
      map.apply(features.row(r).data(), z.data());
      basis.evaluate(z, phi);
      for (std::size_t b = 0; b < P; ++b) design(r, static_cast<Eigen::Index>(b)) = phi[b];
      for (std::size_t j = 0; j < d; ++j) {
        const double xi = increments(r, static_cast<Eigen::Index>(j)) * inv_sd;
        for (std::size_t b = 0; b < P; ++b) design(r, static_cast<Eigen::Index>((1 + j) * P + b)) = phi[b] * xi;
      }
    }
  });
  const Eigen::MatrixXd coef = detail::solve_ridge_least_squares(design, targets, config.ridge);
  const auto m = static_cast<std::size_t>(targets.cols());
  Eigen::MatrixXd zcoef(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(m * d));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j)
      zcoef.col(static_cast<Eigen::Index>(i * d + j)) =
          coef.block(static_cast<Eigen::Index>((1 + j) * P), static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(P), 1) *
          inv_sd;
  const auto raw_dim = static_cast<std::size_t>(features.cols());
  const auto phi = design.leftCols(static_cast<Eigen::Index>(P));
  const Eigen::MatrixXd vcoef = coef.topRows(static_cast<Eigen::Index>(P));
  MartingaleFit fit{CondExpFn::regression(nodes, raw_dim, map, basis, vcoef),
                    CondExpFn::regression(nodes, raw_dim, map, basis, zcoef), phi * vcoef, phi * zcoef};
  return fit;
}

inline PathMatrix eval_condexp(const CondExpFn& fn, const PathMatrix& states) { return fn.evaluate_features(states); }

// ---------------------------------------------------------------------------
// Backend dispatch on a path space
// ---------------------------------------------------------------------------

/// E_{t_step}[targets] and (1/dt) E_{t_step}[targets dW_step^T] for targets
/// measurable at t_{step+1}. `feature_nodes` selects the regression states.
inline MartingaleFit project_step(const PathSpace& space, Backend backend, const RegressionConfig& config,
                                  std::size_t step, std::vector<std::size_t> feature_nodes,
                                  const PathMatrix& targets) {
  const double dt = space.mesh().step(step);
  if (backend == Backend::lsmc) {
    const PathMatrix features = gather_features(space, feature_nodes);
    return fit_martingale_lsmc(config, features, space.increments.steps[step], dt, targets, std::move(feature_nodes));
  }
  if (!space.tree) throw InvalidArgument("tree backend requires a tree path space");
  if (space.noise_dim() != 1) throw InvalidArgument("tree backend requires scalar noise");
  const auto& layout = *space.tree;
  const std::size_t lo = layout.level_of_node[step];
  const std::size_t hi = layout.level_of_node[step + 1];
  PathMatrix values = detail::leaf_average(targets, layout.depth, hi);
  // accum = E_{t_i}[target (W(t_hi) - W(t_i))]
  PathMatrix accum = PathMatrix::Zero(values.rows(), values.cols());
  for (std::size_t i = hi; i-- > lo;) {
    const PathMatrix z = tree_cond_z(i, values, layout.fine_steps[i]);
    accum = tree_condexp(i, accum) + layout.fine_steps[i] * z;
    values = tree_condexp(i, values);
  }
  return {CondExpFn::tree_table(lo, std::move(values)), CondExpFn::tree_table(lo, accum / dt), {}, {}};
}

/// E_{t_node}[targets] with the given regression states.
inline CondExpFn project_value(const PathSpace& space, Backend backend, const RegressionConfig& config,
                               std::size_t node, std::vector<std::size_t> feature_nodes, const PathMatrix& targets) {
  if (backend == Backend::lsmc) {
    const PathMatrix features = gather_features(space, feature_nodes);
    return fit_lsmc(config, features, targets, std::move(feature_nodes));
  }
  if (!space.tree) throw InvalidArgument("tree backend requires a tree path space");
  const auto& layout = *space.tree;
  return CondExpFn::tree_table(layout.level_of_node[node],
                               detail::leaf_average(targets, layout.depth, layout.level_of_node[node]));
}

}  // namespace bsvie
