#include <gtest/gtest.h>

#include "bsvie/mesh.hpp"

using namespace bsvie;

TEST(Mesh, UniformPoints) {
  const auto m = make_uniform_mesh(4, 1.0);
  const std::vector<double> want{0.0, 0.25, 0.5, 0.75, 1.0};
  ASSERT_EQ(m.cells(), 4u);
  for (std::size_t k = 0; k <= 4; ++k) EXPECT_DOUBLE_EQ(m.time(k), want[k]);
  EXPECT_DOUBLE_EQ(m.mesh_norm(), 0.25);

  const auto m2 = make_uniform_mesh(2, 2.0);
  EXPECT_DOUBLE_EQ(m2.time(1), 1.0);
  EXPECT_DOUBLE_EQ(m2.horizon(), 2.0);
}

TEST(Mesh, RejectsDegenerateInput) {
  try {
    make_uniform_mesh(1, 1.0);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("N<2"), std::string::npos);
  }
  EXPECT_THROW(make_uniform_mesh(4, 0.0), InvalidArgument);
  EXPECT_THROW(make_uniform_mesh(4, -1.0), InvalidArgument);
  EXPECT_THROW(TimeMesh({0.0, 1.0}), InvalidArgument);
  EXPECT_THROW(TimeMesh({0.1, 0.5, 1.0}), InvalidArgument);
  EXPECT_THROW(TimeMesh({0.0, 0.5, 0.5, 1.0}), InvalidArgument);
}

TEST(Mesh, TauLookup) {
  const auto m = make_uniform_mesh(4, 1.0);
  auto c = tau_pair(m, 0.3);
  EXPECT_DOUBLE_EQ(c.left, 0.25);
  EXPECT_DOUBLE_EQ(c.right, 0.5);
  EXPECT_EQ(c.index, 1u);
  c = tau_pair(m, 0.25);
  EXPECT_EQ(c.index, 1u);
  EXPECT_DOUBLE_EQ(c.left, 0.25);
  EXPECT_EQ(tau_pair(m, 0.0).index, 0u);
  EXPECT_THROW(tau_pair(m, 1.0), InvalidArgument);
  EXPECT_THROW(tau_pair(m, -0.1), InvalidArgument);
}

TEST(Mesh, TauBracketsEveryTime) {
  const TimeMesh m({0.0, 0.1, 0.35, 0.4, 0.9, 1.3});
  for (int i = 0; i < 1300; ++i) {
    const double t = i * 0.001;
    const auto c = tau_pair(m, t);
    EXPECT_LE(c.left, t);
    EXPECT_LT(t, c.right);
    EXPECT_DOUBLE_EQ(c.right - c.left, m.step(c.index));
  }
}

TEST(Mesh, Refine) {
  const auto r = refine(TimeMesh({0.0, 0.5, 1.0}), 2);
  const std::vector<double> want{0.0, 0.25, 0.5, 0.75, 1.0};
  ASSERT_EQ(r.cells(), 4u);
  for (std::size_t k = 0; k <= 4; ++k) EXPECT_DOUBLE_EQ(r.time(k), want[k]);

  const auto r2 = refine(TimeMesh({0.0, 0.1, 1.0}), 2);
  const std::vector<double> want2{0.0, 0.05, 0.1, 0.55, 1.0};
  for (std::size_t k = 0; k <= 4; ++k) EXPECT_DOUBLE_EQ(r2.time(k), want2[k]);

  const TimeMesh m({0.0, 0.3, 1.0});
  EXPECT_TRUE(refine(m, 1) == m);
  EXPECT_THROW(refine(m, 0), InvalidArgument);
}

TEST(Mesh, RefineComposes) {
  const TimeMesh m({0.0, 0.2, 0.7, 1.5});
  const auto a = refine(m, 6);
  const auto b = refine(refine(m, 2), 3);
  ASSERT_EQ(a.cells(), b.cells());
  for (std::size_t k = 0; k <= a.cells(); ++k) EXPECT_NEAR(a.time(k), b.time(k), 1e-15);
  EXPECT_TRUE(is_refinement(m, a, 6));
  EXPECT_FALSE(is_refinement(m, a, 3));
}

TEST(Mesh, RefinedNormScales) {
  for (std::size_t f : {1u, 2u, 3u, 8u}) {
    const auto m = make_uniform_mesh(5, 2.0);
    EXPECT_NEAR(refine(m, f).mesh_norm(), m.mesh_norm() / f, 1e-15);
  }
}

TEST(Mesh, CoarsenInvertsRefine) {
  const TimeMesh m({0.0, 0.2, 0.7, 1.5});
  EXPECT_TRUE(coarsen(refine(m, 4), 4) == m);
  EXPECT_THROW(coarsen(m, 2), InvalidArgument);
}

TEST(Mesh, JsonRoundTrip) {
  const TimeMesh m({0.0, 0.125, 0.5, 1.0});
  nlohmann::json j = m;
  ASSERT_TRUE(j.is_array());
  EXPECT_EQ(j.size(), 4u);
  EXPECT_TRUE(mesh_from_json(j) == m);
  EXPECT_THROW(mesh_from_json(nlohmann::json::object()), InvalidArgument);
}
