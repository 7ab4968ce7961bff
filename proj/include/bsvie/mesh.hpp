#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bsvie/error.hpp"

namespace bsvie {

/// Result of locating a time inside the half-open cell [t_k, t_{k+1}).
struct CellLookup {
  double left;   ///< tau(t) = t_k
  double right;  ///< tau*(t) = t_{k+1}
  std::size_t index;
};

/// Deterministic partition 0 = t_0 < t_1 < ... < t_N = T with N >= 2.
class TimeMesh {
 public:
  explicit TimeMesh(std::vector<double> points) : points_(std::move(points)) {
    if (points_.size() < 3) throw InvalidArgument("time mesh: N<2 (need at least two cells)");
    if (points_.front() != 0.0) throw InvalidArgument("time mesh: first point must be 0");
    for (std::size_t k = 0; k + 1 < points_.size(); ++k) {
      if (!(points_[k] < points_[k + 1]) || !std::isfinite(points_[k + 1]))
        throw InvalidArgument("time mesh: points must be finite and strictly increasing");
    }
  }

  std::size_t cells() const { return points_.size() - 1; }
  double horizon() const { return points_.back(); }
  double time(std::size_t k) const { return points_[k]; }
  double step(std::size_t k) const { return points_[k + 1] - points_[k]; }
  std::span<const double> points() const { return points_; }

  /// |pi|, the largest cell width.
  double mesh_norm() const {
    double norm = 0.0;
    for (std::size_t k = 0; k < cells(); ++k) norm = std::max(norm, step(k));
    return norm;
  }

  bool operator==(const TimeMesh&) const = default;

 private:
  std::vector<double> points_;
};

inline TimeMesh make_uniform_mesh(std::size_t cells, double horizon) {
  if (cells < 2) throw InvalidArgument("uniform mesh: N<2");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InvalidArgument("uniform mesh: T must be positive");
  std::vector<double> pts(cells + 1);
  for (std::size_t k = 0; k <= cells; ++k) pts[k] = horizon * static_cast<double>(k) / static_cast<double>(cells);
  pts.back() = horizon;
  return TimeMesh(std::move(pts));
}

/// tau(t), tau*(t) and the cell index, for t in [0, T).
/// Grid points resolve to the cell on their right.
inline CellLookup tau_pair(const TimeMesh& mesh, double t) {
  if (!(t >= 0.0) || !(t < mesh.horizon())) throw InvalidArgument("tau: t outside [0,T)");
  const auto pts = mesh.points();
  const auto it = std::upper_bound(pts.begin(), pts.end(), t);
  const auto k = static_cast<std::size_t>(it - pts.begin()) - 1;
  return {pts[k], pts[k + 1], k};
}

/// Splits every cell into `factor` equal sub-cells.
inline TimeMesh refine(const TimeMesh& mesh, std::size_t factor) {
  if (factor == 0) throw InvalidArgument("refine: factor must be >= 1");
  std::vector<double> pts;
  pts.reserve(mesh.cells() * factor + 1);
  for (std::size_t k = 0; k < mesh.cells(); ++k) {
    const double a = mesh.time(k);
    const double h = mesh.step(k);
    pts.push_back(a);
    for (std::size_t j = 1; j < factor; ++j)
      pts.push_back(a + h * static_cast<double>(j) / static_cast<double>(factor));
  }
  pts.push_back(mesh.horizon());
  return TimeMesh(std::move(pts));
}

/// Keeps every `factor`-th point. Inverse of refine on its image.
inline TimeMesh coarsen(const TimeMesh& mesh, std::size_t factor) {
  if (factor == 0 || mesh.cells() % factor != 0)
    throw InvalidArgument("coarsen: factor must divide the number of cells");
  std::vector<double> pts;
  for (std::size_t k = 0; k <= mesh.cells(); k += factor) pts.push_back(mesh.time(k));
  return TimeMesh(std::move(pts));
}

/// True when `fine` equals refine(coarse, factor) point for point (up to rounding).
inline bool is_refinement(const TimeMesh& coarse, const TimeMesh& fine, std::size_t factor) {
  if (factor == 0 || fine.cells() != coarse.cells() * factor) return false;
  for (std::size_t k = 0; k <= coarse.cells(); ++k) {
    const double a = coarse.time(k);
    const double b = fine.time(k * factor);
    if (std::abs(a - b) > 1e-12 * std::max(1.0, coarse.horizon())) return false;
  }
  return true;
}

inline void to_json(nlohmann::json& j, const TimeMesh& mesh) {
  j = std::vector<double>(mesh.points().begin(), mesh.points().end());
}

inline TimeMesh mesh_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw InvalidArgument("time mesh json: expected an array of points");
  return TimeMesh(j.get<std::vector<double>>());
}

}  // namespace bsvie
