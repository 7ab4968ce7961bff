#pragma once

#include <cmath>
#include <vector>

#include "bsvie/error.hpp"
#include "bsvie/model.hpp"
#include "bsvie/noise.hpp"
#include "bsvie/path_space.hpp"

namespace bsvie {

/// Weights of the sub + 1 equispaced nodes of one cell of width `width`:
/// composite Simpson for even `sub`, composite trapezoid otherwise.
inline std::vector<double> cell_weights(std::size_t sub, double width) {
  if (sub == 0) throw InvalidArgument("quadrature: at least one sub-interval per cell");
  const double h = width / static_cast<double>(sub);
  std::vector<double> w(sub + 1);
  if (sub % 2 == 0) {
    for (std::size_t i = 0; i <= sub; ++i) w[i] = (i == 0 || i == sub) ? h / 3.0 : (i % 2 ? 4.0 * h / 3.0 : 2.0 * h / 3.0);
  } else {
    for (std::size_t i = 0; i <= sub; ++i) w[i] = (i == 0 || i == sub) ? h / 2.0 : h;
  }
  return w;
}

/// Mean and standard error of per-path samples.
struct Estimate {
  double mean = 0.0;
  double se = 0.0;
};

inline Estimate estimate(const Eigen::VectorXd& samples) {
  const double M = static_cast<double>(samples.size());
  Estimate e;
  e.mean = samples.sum() / M;
  if (samples.size() > 1) {
    const double var = (samples.array() - e.mean).square().sum() / (M - 1.0);
    e.se = std::sqrt(var / M);
  }
  return e;
}

/// A reference solution (Y, Z) evaluated per path on the nodes of a quadrature mesh.
///
/// Quadrature node q lies in outer cell q / sub; cell endpoints are shared.
class ReferenceField {
 public:
  virtual ~ReferenceField() = default;
  virtual std::size_t paths() const = 0;
  virtual std::size_t value_dim() const = 0;
  virtual std::size_t z_dim() const = 0;
  /// Y(s_q) for q on the closed cell `cell`.
  virtual PathMatrix y(std::size_t cell, std::size_t q) const = 0;
  /// Z(t_qt, s_qs) for qt on the closed cell `t_cell`.
  virtual PathMatrix z(std::size_t t_cell, std::size_t qt, std::size_t qs) const = 0;
  /// When true, z() returns a single row shared by every path.
  virtual bool deterministic_z() const { return false; }
};

/// Closed-form reference driven by the Brownian values at the quadrature nodes.
class ClosedFormField : public ReferenceField {
 public:
  ClosedFormField(const ProblemInstance& inst, PathBatch w) : inst_(inst), w_(std::move(w)) {
    if (!inst_.closed_form) throw InvalidArgument("reference: instance '" + inst_.name + "' has no closed form");
  }

  std::size_t paths() const override { return w_.paths; }
  std::size_t value_dim() const override { return inst_.dims.value; }
  std::size_t z_dim() const override { return inst_.dims.value * inst_.dims.noise; }
  bool deterministic_z() const override { return inst_.closed_form->deterministic_z; }
  const TimeMesh& mesh() const { return w_.mesh; }

  PathMatrix y(std::size_t, std::size_t q) const override {
    PathMatrix out(w_.paths, value_dim());
    const double t = w_.mesh.time(q);
    for (std::size_t p = 0; p < w_.paths; ++p)
      inst_.closed_form->exact_y(t, Span(w_.nodes[q].row(p).data(), w_.dim), OutSpan(out.row(p).data(), value_dim()));
    return out;
  }

  PathMatrix z(std::size_t, std::size_t qt, std::size_t qs) const override {
    const std::size_t rows = deterministic_z() ? 1 : w_.paths;
    PathMatrix out(rows, z_dim());
    const double t = w_.mesh.time(qt);
    const double s = w_.mesh.time(qs);
    for (std::size_t p = 0; p < rows; ++p)
      inst_.closed_form->exact_z(t, s, Span(w_.nodes[qt].row(p).data(), w_.dim),
                                 Span(w_.nodes[qs].row(p).data(), w_.dim), OutSpan(out.row(p).data(), z_dim()));
    return out;
  }

 private:
  ProblemInstance inst_;
  PathBatch w_;
};

}  // namespace bsvie
