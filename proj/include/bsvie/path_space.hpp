#pragma once

#include <optional>
#include <span>
#include <vector>

#include "bsvie/forward.hpp"
#include "bsvie/noise.hpp"

namespace bsvie {

/// Leaf structure of a tree-mode sample space.
///
/// Paths are the leaves of a binary tree of depth `depth`; solver node j sits
/// at tree level level_of_node[j], and fine_steps[i] is the width of tree step i.
struct TreeLayout {
  std::size_t depth = 0;
  std::vector<std::size_t> level_of_node;
  std::vector<double> fine_steps;
};

/// The sample paths a backward solver works on: increments and forward
/// states on the solver mesh, plus the tree layout in tree mode.
struct PathSpace {
  IncrementBatch increments;
  StatePaths states;
  std::optional<TreeLayout> tree;

  const TimeMesh& mesh() const { return increments.mesh; }
  std::size_t paths() const { return increments.paths; }
  std::size_t noise_dim() const { return increments.dim; }
  std::size_t state_dim() const { return states.dim; }
  bool is_tree() const { return tree.has_value(); }
};

/// Monte Carlo space: fine increments summed by `factor`, Euler-Maruyama states.
inline PathSpace make_path_space(const ProblemInstance& inst, const IncrementBatch& fine, std::size_t factor = 1) {
  auto inc = factor == 1 ? fine : coarsen_increments(fine, factor);
  auto states = euler_maruyama(inst, inc);
  return PathSpace{std::move(inc), std::move(states), std::nullopt};
}

/// Tree space over every leaf of `tree`, with solver nodes every `factor` levels.
inline PathSpace make_tree_space(const ProblemInstance& inst, const TreeEnsemble& tree, std::size_t factor = 1) {
  if (inst.dims.noise != 1) throw InvalidArgument("tree mode requires scalar noise (d = 1)");
  auto space = make_path_space(inst, tree.increments(), factor);
  TreeLayout layout;
  layout.depth = tree.depth();
  for (std::size_t j = 0; j <= space.mesh().cells(); ++j) layout.level_of_node.push_back(j * factor);
  for (std::size_t i = 0; i < tree.depth(); ++i) layout.fine_steps.push_back(tree.mesh().step(i));
  space.tree = std::move(layout);
  return space;
}

/// Concatenated states at the given nodes: paths x (n * nodes.size()).
inline PathMatrix gather_features(const PathSpace& space, std::span<const std::size_t> nodes) {
  const std::size_t n = space.state_dim();
  PathMatrix f(space.paths(), n * nodes.size());
  for (std::size_t c = 0; c < nodes.size(); ++c) f.middleCols(c * n, n) = space.states.nodes[nodes[c]];
  return f;
}

}  // namespace bsvie
