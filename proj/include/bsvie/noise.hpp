#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "bsvie/error.hpp"
#include "bsvie/mesh.hpp"
#include "bsvie/parallel.hpp"
#include "bsvie/types.hpp"

namespace bsvie {

enum class NoiseKind { gaussian, binary };

inline std::string to_string(NoiseKind kind) { return kind == NoiseKind::gaussian ? "gaussian" : "binary"; }

inline NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "gaussian") return NoiseKind::gaussian;
  if (s == "binary") return NoiseKind::binary;
  throw InvalidArgument("unknown noise kind '" + s + "'");
}

namespace detail {

constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stateless hash of (seed, path, step, component, stream).
constexpr std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t path, std::uint64_t step,
                                     std::uint64_t comp, std::uint64_t stream) {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ path);
  h = mix64(h ^ (step * 0x100000001b3ULL + comp));
  return mix64(h ^ stream);
}

/// Uniform in (0, 1].
inline double unit_open_left(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

inline double counter_normal(std::uint64_t seed, std::uint64_t path, std::uint64_t step, std::uint64_t comp) {
  const double u1 = unit_open_left(counter_hash(seed, path, step, comp, 0));
  const double u2 = unit_open_left(counter_hash(seed, path, step, comp, 1));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace detail

/// Driving-noise increments dW_k for M paths on a mesh.
struct IncrementBatch {
  TimeMesh mesh;
  std::size_t dim = 1;
  std::size_t paths = 0;
  NoiseKind kind = NoiseKind::gaussian;
  std::uint64_t seed = 0;
  std::vector<PathMatrix> steps;  ///< steps[k](path, component)

  double value(std::size_t path, std::size_t step, std::size_t comp) const { return steps[step](path, comp); }
};

/// Cumulative Brownian values W(t_k); nodes[0] is identically zero.
struct PathBatch {
  TimeMesh mesh;
  std::size_t dim = 1;
  std::size_t paths = 0;
  std::vector<PathMatrix> nodes;
};

inline IncrementBatch generate_increments(const TimeMesh& mesh, std::size_t dim, std::size_t paths, NoiseKind kind,
                                          std::uint64_t seed) {
  if (paths == 0) throw InvalidArgument("generate_increments: M must be positive");
  if (dim == 0) throw InvalidArgument("generate_increments: d must be positive");
  IncrementBatch batch{mesh, dim, paths, kind, seed, {}};
  batch.steps.assign(mesh.cells(), PathMatrix(paths, dim));
  for (std::size_t k = 0; k < mesh.cells(); ++k) {
    const double sd = std::sqrt(mesh.step(k));
    auto& out = batch.steps[k];
    parallel_for(paths, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t p = lo; p < hi; ++p)
        for (std::size_t j = 0; j < dim; ++j) {
          if (kind == NoiseKind::gaussian) {
            out(p, j) = sd * detail::counter_normal(seed, p, k, j);
          } else {
            const bool up = (detail::counter_hash(seed, p, k, j, 2) >> 63) == 0;
            out(p, j) = up ? sd : -sd;
          }
        }
    });
  }
  return batch;
}

/// Sums blocks of `factor` consecutive increments onto coarsen(mesh, factor).
inline IncrementBatch coarsen_increments(const IncrementBatch& fine, std::size_t factor) {
  IncrementBatch out{coarsen(fine.mesh, factor), fine.dim, fine.paths, fine.kind, fine.seed, {}};
  out.steps.reserve(out.mesh.cells());
  for (std::size_t k = 0; k < out.mesh.cells(); ++k) {
    PathMatrix sum = fine.steps[k * factor];
    for (std::size_t j = 1; j < factor; ++j) sum += fine.steps[k * factor + j];
    out.steps.push_back(std::move(sum));
  }
  return out;
}

inline PathBatch accumulate(const IncrementBatch& inc) {
  PathBatch out{inc.mesh, inc.dim, inc.paths, {}};
  out.nodes.reserve(inc.mesh.cells() + 1);
  out.nodes.push_back(PathMatrix::Zero(inc.paths, inc.dim));
  for (std::size_t k = 0; k < inc.mesh.cells(); ++k) out.nodes.push_back(out.nodes.back() + inc.steps[k]);
  return out;
}

/// Complete binary tree of sign sequences for scalar noise.
///
/// Leaf i carries sign + at step k when bit (N-1-k) of i is clear, so the
/// ancestor of leaf i at level l is node i >> (N - l) and the children of
/// node q at level l are 2q (up) and 2q + 1 (down).
class TreeEnsemble {
 public:
  static constexpr std::size_t default_cap = 14;

  TreeEnsemble(TimeMesh mesh, std::size_t cap = default_cap) : mesh_(std::move(mesh)) {
    if (mesh_.cells() > cap)
      throw InvalidArgument("tree_enumerate: N=" + std::to_string(mesh_.cells()) + " exceeds cap " +
                            std::to_string(cap));
  }

  const TimeMesh& mesh() const { return mesh_; }
  std::size_t depth() const { return mesh_.cells(); }
  std::size_t leaves() const { return std::size_t{1} << depth(); }
  std::size_t nodes_at(std::size_t level) const { return std::size_t{1} << level; }
  double leaf_probability() const { return std::ldexp(1.0, -static_cast<int>(depth())); }

  int sign(std::size_t leaf, std::size_t step) const {
    return ((leaf >> (depth() - 1 - step)) & 1U) == 0 ? +1 : -1;
  }
  std::size_t ancestor(std::size_t leaf, std::size_t level) const { return leaf >> (depth() - level); }

  /// W(t_level) at a node.
  double node_value(std::size_t level, std::size_t node) const {
    double w = 0.0;
    for (std::size_t k = 0; k < level; ++k) {
      const bool down = ((node >> (level - 1 - k)) & 1U) != 0;
      w += (down ? -1.0 : 1.0) * std::sqrt(mesh_.step(k));
    }
    return w;
  }

  /// Every leaf as one path of a binary increment batch.
  IncrementBatch increments() const {
    IncrementBatch batch{mesh_, 1, leaves(), NoiseKind::binary, 0, {}};
    batch.steps.assign(depth(), PathMatrix(leaves(), 1));
    for (std::size_t k = 0; k < depth(); ++k) {
      const double sd = std::sqrt(mesh_.step(k));
      for (std::size_t leaf = 0; leaf < leaves(); ++leaf) batch.steps[k](leaf, 0) = sign(leaf, k) * sd;
    }
    return batch;
  }

 private:
  TimeMesh mesh_;
};

inline TreeEnsemble tree_enumerate(const TimeMesh& mesh, std::size_t cap = TreeEnsemble::default_cap) {
  return TreeEnsemble(mesh, cap);
}

// Binary dump: magic "BSVIEINC", then u64 seed, N, d, M, kind (0 gaussian,
// 1 binary), the N+1 mesh points, and the increments in [path][step][component]
// order. All fields little-endian, floats as IEEE-754 binary64.

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw InvalidArgument("increment dump: truncated input");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& os, double x) { put_u64(os, std::bit_cast<std::uint64_t>(x)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

}  // namespace detail

inline void write_increments(std::ostream& os, const IncrementBatch& batch) {
  os.write("BSVIEINC", 8);
  detail::put_u64(os, batch.seed);
  detail::put_u64(os, batch.mesh.cells());
  detail::put_u64(os, batch.dim);
  detail::put_u64(os, batch.paths);
  detail::put_u64(os, batch.kind == NoiseKind::gaussian ? 0 : 1);
  for (double t : batch.mesh.points()) detail::put_f64(os, t);
  for (std::size_t p = 0; p < batch.paths; ++p)
    for (std::size_t k = 0; k < batch.mesh.cells(); ++k)
      for (std::size_t j = 0; j < batch.dim; ++j) detail::put_f64(os, batch.steps[k](p, j));
}

inline IncrementBatch read_increments(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, "BSVIEINC", 8) != 0)
    throw InvalidArgument("increment dump: bad magic");
  const auto seed = detail::get_u64(is);
  const auto cells = detail::get_u64(is);
  const auto dim = detail::get_u64(is);
  const auto paths = detail::get_u64(is);
  const auto kind = detail::get_u64(is);
  if (kind > 1 || dim == 0 || paths == 0) throw InvalidArgument("increment dump: bad header");
  std::vector<double> pts(cells + 1);
  for (auto& t : pts) t = detail::get_f64(is);
  IncrementBatch batch{TimeMesh(std::move(pts)), dim, paths, kind == 0 ? NoiseKind::gaussian : NoiseKind::binary,
                       seed, {}};
  batch.steps.assign(cells, PathMatrix(paths, dim));
  for (std::size_t p = 0; p < paths; ++p)
    for (std::size_t k = 0; k < cells; ++k)
      for (std::size_t j = 0; j < dim; ++j) batch.steps[k](p, j) = detail::get_f64(is);
  return batch;
}

}  // namespace bsvie
