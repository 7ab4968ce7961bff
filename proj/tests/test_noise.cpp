#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "bsvie/noise.hpp"

using namespace bsvie;

TEST(Noise, SameSeedSameBatch) {
  const auto m = make_uniform_mesh(5, 1.0);
  const auto a = generate_increments(m, 2, 300, NoiseKind::gaussian, 99);
  const auto b = generate_increments(m, 2, 300, NoiseKind::gaussian, 99);
  const auto c = generate_increments(m, 2, 300, NoiseKind::gaussian, 100);
  bool differs = false;
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(a.steps[k], b.steps[k]);
    differs = differs || (a.steps[k] != c.steps[k]);
  }
  EXPECT_TRUE(differs);
}

TEST(Noise, PathValuesIndependentOfBatchSize) {
  const auto m = make_uniform_mesh(3, 1.0);
  const auto small = generate_increments(m, 1, 10, NoiseKind::gaussian, 5);
  const auto large = generate_increments(m, 1, 10000, NoiseKind::gaussian, 5);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t p = 0; p < 10; ++p) EXPECT_EQ(small.steps[k](p, 0), large.steps[k](p, 0));
}

TEST(Noise, BinaryEntries) {
  const auto b = generate_increments(make_uniform_mesh(4, 1.0), 1, 1000, NoiseKind::binary, 3);
  std::size_t plus = 0;
  for (const auto& s : b.steps)
    for (Eigen::Index p = 0; p < s.rows(); ++p) {
      EXPECT_TRUE(s(p, 0) == 0.5 || s(p, 0) == -0.5);
      plus += s(p, 0) > 0;
    }
  EXPECT_GT(plus, 1700u);
  EXPECT_LT(plus, 2300u);
}

TEST(Noise, GaussianMoments) {
  const std::size_t M = 100000;
  const auto m = make_uniform_mesh(4, 1.0);
  const auto b = generate_increments(m, 1, M, NoiseKind::gaussian, 11);
  for (std::size_t k = 0; k < 4; ++k) {
    const double dt = m.step(k);
    const double mean = b.steps[k].col(0).mean();
    EXPECT_LE(std::abs(mean), 4.0 * std::sqrt(dt / M));
    const double var = (b.steps[k].col(0).array() - mean).square().sum() / (M - 1.0);
    // sample variance has standard error dt sqrt(2/M)
    EXPECT_LE(std::abs(var - dt), 5.0 * dt * std::sqrt(2.0 / M));
  }
}

TEST(Noise, RejectsEmptyBatches) {
  const auto m = make_uniform_mesh(4, 1.0);
  EXPECT_THROW(generate_increments(m, 1, 0, NoiseKind::gaussian, 1), InvalidArgument);
  EXPECT_THROW(generate_increments(m, 0, 5, NoiseKind::gaussian, 1), InvalidArgument);
  EXPECT_THROW(noise_kind_from_string("uniform"), InvalidArgument);
}

TEST(Noise, Accumulate) {
  IncrementBatch inc{make_uniform_mesh(2, 1.0), 1, 1, NoiseKind::gaussian, 0, {}};
  inc.steps = {PathMatrix::Constant(1, 1, 0.5), PathMatrix::Constant(1, 1, -0.5)};
  const auto w = accumulate(inc);
  ASSERT_EQ(w.nodes.size(), 3u);
  EXPECT_EQ(w.nodes[0](0, 0), 0.0);
  EXPECT_EQ(w.nodes[1](0, 0), 0.5);
  EXPECT_EQ(w.nodes[2](0, 0), 0.0);

  auto zero = inc;
  for (auto& s : zero.steps) s.setZero();
  for (const auto& n : accumulate(zero).nodes) EXPECT_EQ(n(0, 0), 0.0);
}

TEST(Noise, AccumulateDifferencesRecoverIncrements) {
  const auto b = generate_increments(make_uniform_mesh(6, 1.0), 2, 50, NoiseKind::gaussian, 4);
  const auto w = accumulate(b);
  for (std::size_t k = 0; k < 6; ++k) {
    const PathMatrix d = w.nodes[k + 1] - w.nodes[k];
    EXPECT_LE((d - b.steps[k]).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Noise, CoarsenSumsFineCells) {
  const auto fine = generate_increments(make_uniform_mesh(8, 1.0), 1, 20, NoiseKind::gaussian, 8);
  const auto coarse = coarsen_increments(fine, 4);
  ASSERT_EQ(coarse.mesh.cells(), 2u);
  const auto wf = accumulate(fine);
  const auto wc = accumulate(coarse);
  EXPECT_LE((wc.nodes[1] - wf.nodes[4]).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((wc.nodes[2] - wf.nodes[8]).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Noise, TreeLeaves) {
  const auto tree = tree_enumerate(make_uniform_mesh(2, 1.0));
  EXPECT_EQ(tree.leaves(), 4u);
  EXPECT_DOUBLE_EQ(tree.leaf_probability(), 0.25);
  const auto w = accumulate(tree.increments());
  std::vector<double> terminal;
  for (std::size_t p = 0; p < 4; ++p) terminal.push_back(w.nodes[2](p, 0));
  EXPECT_NEAR(terminal[0], std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(terminal[1], 0.0, 1e-15);
  EXPECT_NEAR(terminal[2], 0.0, 1e-15);
  EXPECT_NEAR(terminal[3], -std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(w.nodes[2].col(0).mean(), 0.0, 1e-15);
}

TEST(Noise, TreeStructure) {
  const TimeMesh m({0.0, 0.1, 0.5, 0.6, 1.0});
  const auto tree = tree_enumerate(m);
  const auto inc = tree.increments();
  double total = 0.0;
  for (std::size_t leaf = 0; leaf < tree.leaves(); ++leaf) total += tree.leaf_probability();
  EXPECT_DOUBLE_EQ(total, 1.0);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_NEAR(inc.steps[k].col(0).mean(), 0.0, 1e-15);
    EXPECT_NEAR(inc.steps[k].col(0).squaredNorm() / tree.leaves(), m.step(k), 1e-15);
  }
  // each node at level l has two children at level l + 1
  for (std::size_t leaf = 0; leaf < tree.leaves(); ++leaf)
    for (std::size_t l = 0; l < 4; ++l) EXPECT_EQ(tree.ancestor(leaf, l + 1) >> 1, tree.ancestor(leaf, l));
  const auto w = accumulate(inc);
  for (std::size_t leaf = 0; leaf < tree.leaves(); ++leaf)
    for (std::size_t l = 0; l <= 4; ++l) EXPECT_NEAR(tree.node_value(l, tree.ancestor(leaf, l)), w.nodes[l](leaf, 0), 1e-15);
  EXPECT_THROW(tree_enumerate(make_uniform_mesh(15, 1.0)), InvalidArgument);
  EXPECT_NO_THROW(tree_enumerate(make_uniform_mesh(3, 1.0), 3));
}

TEST(Noise, BinaryDumpRoundTrip) {
  const auto b = generate_increments(TimeMesh({0.0, 0.3, 1.0}), 2, 7, NoiseKind::gaussian, 123);
  std::stringstream ss;
  write_increments(ss, b);
  EXPECT_EQ(ss.str().size(), 8u + 5 * 8 + 3 * 8 + 7 * 2 * 2 * 8);
  EXPECT_EQ(ss.str().substr(0, 8), "BSVIEINC");
  const auto r = read_increments(ss);
  EXPECT_EQ(r.seed, 123u);
  EXPECT_EQ(r.dim, 2u);
  EXPECT_EQ(r.paths, 7u);
  EXPECT_EQ(r.kind, NoiseKind::gaussian);
  EXPECT_TRUE(r.mesh == b.mesh);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(r.steps[k], b.steps[k]);

  std::stringstream bad("NOTMAGIC");
  EXPECT_THROW(read_increments(bad), InvalidArgument);
  std::stringstream truncated(ss.str().substr(0, 30));
  EXPECT_THROW(read_increments(truncated), InvalidArgument);
}
