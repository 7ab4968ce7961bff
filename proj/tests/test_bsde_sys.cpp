#include <gtest/gtest.h>

#include <cmath>

#include "bsvie/bsde_sys.hpp"
#include "oracles.hpp"

using namespace bsvie;

namespace {

BsdeSystemSolution tree_system(const ProblemInstance& inst, std::size_t N, std::size_t R) {
  const auto outer = make_uniform_mesh(N, inst.horizon);
  BsdeSystemOptions opt;
  opt.backend = Backend::tree;
  return solve_bsde_system(inst, outer, R, make_inner_space(inst, outer, R, Backend::tree, 0, NoiseKind::binary, 0),
                           opt);
}

BsdeSystemSolution mc_system(const ProblemInstance& inst, std::size_t N, std::size_t R, std::size_t M,
                             std::uint64_t seed) {
  const auto outer = make_uniform_mesh(N, inst.horizon);
  return solve_bsde_system(inst, outer, R, make_inner_space(inst, outer, R, Backend::lsmc, M, NoiseKind::gaussian, seed),
                           {});
}

/// Y(t) = t, Z = 0.
class LinearInTime : public ReferenceField {
 public:
  LinearInTime(TimeMesh fine, std::size_t paths) : fine_(std::move(fine)), paths_(paths) {}
  std::size_t paths() const override { return paths_; }
  std::size_t value_dim() const override { return 1; }
  std::size_t z_dim() const override { return 1; }
  bool deterministic_z() const override { return true; }
  PathMatrix y(std::size_t, std::size_t q) const override {
    return PathMatrix::Constant(static_cast<Eigen::Index>(paths_), 1, fine_.time(q));
  }
  PathMatrix z(std::size_t, std::size_t, std::size_t) const override { return PathMatrix::Zero(1, 1); }

 private:
  TimeMesh fine_;
  std::size_t paths_;
};

}  // namespace

TEST(IntervalAverage, PiecewiseConstant) {
  const auto outer = make_uniform_mesh(2, 1.0);
  const auto inner = refine(outer, 4);
  const auto f = [](std::size_t j) { return PathMatrix::Constant(1, 1, static_cast<double>(j)); };
  EXPECT_NEAR(interval_average(outer, inner, 0.0, 0, 1, 1, f)(0, 0), 1.5, 1e-15);
  EXPECT_NEAR(interval_average(outer, inner, 0.0, 1, 1, 1, f)(0, 0), 5.5, 1e-15);
  // only [0.25, 0.5) counts: (2 + 3) * 0.125 / 0.5
  EXPECT_NEAR(interval_average(outer, inner, 0.25, 0, 1, 1, f)(0, 0), 1.25, 1e-15);
}

TEST(BsdeSystem, MartingaleIsExact) {
  const auto sol = tree_system(catalog("A_martingale"), 3, 3);
  const auto& space = sol.space();
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i <= 3; ++i)
      EXPECT_NEAR((sol.own_y(k, i) - space.states.nodes[3 * k + i]).cwiseAbs().maxCoeff(), 0.0, 1e-14);
    for (std::size_t j = 0; j < 9; ++j) EXPECT_NEAR((sol.z(k, j).array() - 1.0).abs().maxCoeff(), 0.0, 1e-13);
    EXPECT_NEAR(sol.norms(k).int_z, 1.0, 1e-12);
  }
  const auto err = bsde_approx_error(sol);
  EXPECT_NEAR(err.total.mean, 0.0, 1e-20);
  for (const auto& fn : zbar(sol)) EXPECT_NEAR((fn.evaluate(space).array() - 1.0).abs().maxCoeff(), 0.0, 1e-13);
}

TEST(BsdeSystem, ConstantFreeTerm) {
  auto inst = catalog("A_martingale");
  inst.free_term = [](double, Span, Span, OutSpan out) { out[0] = -1.5; };
  const auto sol = tree_system(inst, 2, 4);
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t i = 0; i <= 4; ++i) EXPECT_NEAR((sol.own_y(k, i).array() + 1.5).abs().maxCoeff(), 0.0, 1e-14);
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(sol.z(k, j).cwiseAbs().maxCoeff(), 0.0, 1e-14);
    EXPECT_NEAR(sol.norms(k).sup_y, 2.25, 1e-14);
  }
}

TEST(BsdeSystem, DiscountedZbar) {
  // Z(t_k, s) ~ exp(-lambda (T - max(s, t_{k+1}))) up to the inner step
  const double lambda = 0.8;
  const std::size_t N = 2, R = 5;
  const auto sol = tree_system(catalog("C_linear_y", {{"lambda", lambda}}), N, R);
  const auto zb = zbar(sol);
  const auto& outer = sol.outer_mesh();
  const double h = outer.step(0) / R;
  for (std::size_t k = 0; k < N; ++k)
    for (std::size_t l = 0; l < N; ++l) {
      const double a = outer.time(l), b = outer.time(l + 1), anchor = outer.time(k + 1);
      // (1/dt) int_a^b exp(-lambda (T - max(s, anchor))) ds
      double integral = 0.0;
      const int n = 2000;
      for (int q = 0; q < n; ++q) {
        const double s = a + (q + 0.5) * (b - a) / n;
        integral += std::exp(-lambda * (1.0 - std::max(s, anchor))) / n;
      }
      const PathMatrix v = zb[k * N + l].evaluate(sol.space());
      EXPECT_NEAR((v.array() - integral).abs().maxCoeff(), 0.0, 2.0 * lambda * h) << k << "," << l;
    }
}

TEST(BsdeSystem, LinearZ2ApproximationError) {
  const auto inst = catalog("E_linear_z2");
  const auto e2 = bsde_approx_error(tree_system(inst, 2, 4));
  const auto e3 = bsde_approx_error(tree_system(inst, 3, 4));
  EXPECT_NEAR(e2.total.mean, oracles::linear_z2_bsde_error(2, 1.0, 1.0), 1e-10);
  EXPECT_NEAR(e3.total.mean, oracles::linear_z2_bsde_error(3, 1.0, 1.0), 1e-10);
  EXPECT_LT(e3.total.mean, e2.total.mean);
}

TEST(BsdeSystem, LinearZ2ApproximationErrorMonteCarlo) {
  const auto inst = catalog("E_linear_z2");
  const auto e = bsde_approx_error(mc_system(inst, 4, 4, 20000, 7));
  EXPECT_NEAR(e.total.mean, oracles::linear_z2_bsde_error(4, 1.0, 1.0), 3.0 * e.total.se + 1e-6);
}

TEST(Moduli, LinearZ2ClosedForm) {
  const auto inst = catalog("E_linear_z2");
  const auto outer = make_uniform_mesh(4, 1.0);
  const auto fine = generate_increments(refine(outer, 4), 1, 20000, NoiseKind::gaussian, 3);
  const auto m = regularity_moduli(inst, outer, fine);
  EXPECT_NEAR(m.total.mean, oracles::linear_z2_moduli(4, 1.0, 1.0), 4.0 * m.total.se);
  EXPECT_LE(m.z.mean, 1e-12);
}

TEST(Moduli, LinearZ2Tree) {
  // binary noise matches the first two moments, and the Y-part only needs those
  const auto inst = catalog("E_linear_z2");
  const auto outer = make_uniform_mesh(2, 1.0);
  const auto fine = generate_increments(refine(outer, 4), 1, 2, NoiseKind::binary, 0);
  const auto m = regularity_moduli(inst, outer, fine, Backend::tree);
  EXPECT_NEAR(m.total.mean, oracles::linear_z2_moduli(2, 1.0, 1.0), 1e-12);
}

TEST(Moduli, DeterministicLinearPath) {
  const auto inst = catalog("A_martingale");
  const auto outer = make_uniform_mesh(5, 1.0);
  const auto fine = refine(outer, 4);
  const PathSpace quad = make_path_space(inst, generate_increments(fine, 1, 1000, NoiseKind::gaussian, 1));
  const auto m = regularity_moduli(LinearInTime(fine, 1000), outer, quad, Backend::lsmc, {});
  const double dt = 0.2;
  EXPECT_NEAR(m.y.mean, dt * dt / 12.0, 1e-12);
  EXPECT_NEAR(m.z.mean, 0.0, 1e-20);
}

TEST(Moduli, FromSystem) {
  const auto m = regularity_moduli(tree_system(catalog("E_linear_z2"), 2, 4));
  EXPECT_TRUE(std::isfinite(m.total.mean));
  EXPECT_GT(m.y.mean, 0.0);
}

TEST(BsdeSystem, Errors) {
  const auto inst = catalog("A_martingale");
  const auto outer = make_uniform_mesh(2, 1.0);
  EXPECT_THROW(make_inner_space(inst, outer, 0, Backend::lsmc, 100, NoiseKind::gaussian, 1), InvalidArgument);
  const auto space = make_inner_space(inst, outer, 2, Backend::lsmc, 1000, NoiseKind::gaussian, 1);
  EXPECT_THROW(solve_bsde_system(inst, outer, 0, space, {}), InvalidArgument);
  EXPECT_THROW(solve_bsde_system(inst, outer, 3, space, {}), InvalidArgument);
  BsdeSystemOptions tree;
  tree.backend = Backend::tree;
  EXPECT_THROW(solve_bsde_system(inst, outer, 2, space, tree), InvalidArgument);
  EXPECT_THROW(cell_weights(0, 1.0), InvalidArgument);
}

TEST(Quadrature, Weights) {
  const auto s = cell_weights(4, 1.0);
  ASSERT_EQ(s.size(), 5u);
  EXPECT_NEAR(s[0], 1.0 / 12.0, 1e-15);
  EXPECT_NEAR(s[1], 4.0 / 12.0, 1e-15);
  EXPECT_NEAR(s[2], 2.0 / 12.0, 1e-15);
  const auto t = cell_weights(3, 0.6);
  EXPECT_NEAR(t[0], 0.1, 1e-15);
  EXPECT_NEAR(t[1], 0.2, 1e-15);
  const auto one = cell_weights(1, 2.0);
  EXPECT_NEAR(one[0] + one[1], 2.0, 1e-15);
}
