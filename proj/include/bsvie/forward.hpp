#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bsvie/error.hpp"
#include "bsvie/model.hpp"
#include "bsvie/noise.hpp"
#include "bsvie/parallel.hpp"

namespace bsvie {

/// State values X(t_k) per path; nodes[0] holds x0 on every path.
struct StatePaths {
  TimeMesh mesh;
  std::size_t dim = 1;
  std::size_t paths = 0;
  std::vector<PathMatrix> nodes;
};

namespace detail {

inline void check_dims(const ProblemInstance& inst, const IncrementBatch& inc) {
  if (inst.x0.size() != inst.dims.state)
    throw InvalidArgument("forward: x0 has " + std::to_string(inst.x0.size()) + " entries, expected n=" +
                          std::to_string(inst.dims.state));
  if (inc.dim != inst.dims.noise)
    throw InvalidArgument("forward: increments have d=" + std::to_string(inc.dim) + ", instance expects d=" +
                          std::to_string(inst.dims.noise));
}

inline StatePaths initial_states(const ProblemInstance& inst, const IncrementBatch& inc) {
  StatePaths out{inc.mesh, inst.dims.state, inc.paths, {}};
  out.nodes.reserve(inc.mesh.cells() + 1);
  PathMatrix start(inc.paths, inst.dims.state);
  for (std::size_t p = 0; p < inc.paths; ++p)
    for (std::size_t i = 0; i < inst.dims.state; ++i) start(p, i) = inst.x0[i];
  out.nodes.push_back(std::move(start));
  return out;
}

}  // namespace detail

/// X(t_{k+1}) = X(t_k) + b(t_k, X(t_k)) dt_k + sigma(t_k, X(t_k)) dW_k.
inline StatePaths euler_maruyama(const ProblemInstance& inst, const IncrementBatch& inc) {
  detail::check_dims(inst, inc);
  const std::size_t n = inst.dims.state;
  const std::size_t d = inst.dims.noise;
  auto out = detail::initial_states(inst, inc);
  for (std::size_t k = 0; k < inc.mesh.cells(); ++k) {
    const double t = inc.mesh.time(k);
    const double dt = inc.mesh.step(k);
    const PathMatrix& x = out.nodes.back();
    PathMatrix next(inc.paths, n);
    parallel_for(inc.paths, [&](std::size_t lo, std::size_t hi) {
      std::vector<double> b(n), sig(n * d);
      for (std::size_t p = lo; p < hi; ++p) {
        Span xp(x.row(p).data(), n);
        inst.drift(t, xp, b);
        inst.diffusion(t, xp, sig);
        for (std::size_t i = 0; i < n; ++i) {
          double v = xp[i] + b[i] * dt;
          for (std::size_t j = 0; j < d; ++j) v += sig[i * d + j] * inc.steps[k](p, j);
          if (!std::isfinite(v))
            throw NumericalError("euler_maruyama: non-finite state at path " + std::to_string(p) + ", step " +
                                 std::to_string(k));
          next(p, i) = v;
        }
      }
    });
    out.nodes.push_back(std::move(next));
  }
  return out;
}

/// X(t_k) from the instance's explicit transition map applied to W(t_k).
inline StatePaths exact_paths(const ProblemInstance& inst, const IncrementBatch& inc) {
  if (!inst.exact_state) throw InvalidArgument("exact_paths: instance '" + inst.name + "' has no exact transition");
  detail::check_dims(inst, inc);
  const auto w = accumulate(inc);
  StatePaths out{inc.mesh, inst.dims.state, inc.paths, {}};
  for (std::size_t k = 0; k <= inc.mesh.cells(); ++k) {
    PathMatrix x(inc.paths, inst.dims.state);
    for (std::size_t p = 0; p < inc.paths; ++p)
      inst.exact_state(inc.mesh.time(k), Span(w.nodes[k].row(p).data(), inc.dim),
                       OutSpan(x.row(p).data(), inst.dims.state));
    out.nodes.push_back(std::move(x));
  }
  return out;
}

struct StrongError {
  double value = 0.0;           ///< max_k sample mean of |X(t_k) - X^pi(t_k)|^2
  double standard_error = 0.0;  ///< at the maximizing node
  std::size_t node = 0;
};

inline StrongError forward_strong_error(const StatePaths& em, const StatePaths& exact) {
  if (em.paths != exact.paths || em.dim != exact.dim || em.nodes.size() != exact.nodes.size() ||
      !(em.mesh == exact.mesh))
    throw InvalidArgument("forward_strong_error: shape mismatch");
  StrongError best;
  for (std::size_t k = 0; k < em.nodes.size(); ++k) {
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t p = 0; p < em.paths; ++p) {
      const double e = (exact.nodes[k].row(p) - em.nodes[k].row(p)).squaredNorm();
      sum += e;
      sum2 += e * e;
    }
    const double M = static_cast<double>(em.paths);
    const double mean = sum / M;
    if (k == 0 || mean > best.value) {
      const double var = em.paths > 1 ? std::max(0.0, (sum2 - M * mean * mean) / (M - 1.0)) : 0.0;
      best = {mean, std::sqrt(var / M), k};
    }
  }
  return best;
}

}  // namespace bsvie
