#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "bsvie/model.hpp"

using namespace bsvie;

namespace {

double y_at(const ProblemInstance& inst, double t, double w) {
  double out = 0.0;
  const double wv[1] = {w};
  inst.closed_form->exact_y(t, Span(wv, 1), OutSpan(&out, 1));
  return out;
}

double z_at(const ProblemInstance& inst, double t, double s, double wt = 0.0, double ws = 0.0) {
  double out = 0.0;
  const double a[1] = {wt}, b[1] = {ws};
  inst.closed_form->exact_z(t, s, Span(a, 1), Span(b, 1), OutSpan(&out, 1));
  return out;
}

}  // namespace

TEST(Model, CatalogClosedForms) {
  const auto a = catalog("A_martingale");
  EXPECT_EQ(y_at(a, 0.0, 0.0), 0.0);
  EXPECT_EQ(y_at(a, 0.4, 0.7), 0.7);
  EXPECT_EQ(z_at(a, 0.4, 0.1), 1.0);

  const auto c = catalog("C_linear_y", {{"lambda", 1.0}});
  EXPECT_NEAR(y_at(c, 0.5, 1.0), 0.606531, 1e-6);
  EXPECT_NEAR(z_at(c, 0.5, 0.2), std::exp(-0.5), 1e-15);
  EXPECT_NEAR(z_at(c, 0.2, 0.5), std::exp(-0.5), 1e-15);

  const auto e = catalog("E_linear_z2", {{"c", 1.0}});
  EXPECT_NEAR(y_at(e, 0.25, 0.3), 0.3 + 0.75, 1e-15);
  EXPECT_EQ(z_at(e, 0.1, 0.9), 1.0);
  EXPECT_TRUE(e.closed_form->deterministic_z);

  const auto g = catalog("GBM_terminal");
  EXPECT_NEAR(y_at(g, 0.0, 0.0), std::exp(0.1), 1e-14);
  EXPECT_FALSE(g.closed_form->has_exact_discrete());
}

TEST(Model, LinearZ2ClosedFormBalancesEquation) {
  // psi(t) + int_t^T c ds - int_t^T dW = W(t) + c (T - t) for any endpoint values
  const double c = 1.3, T = 2.0;
  const auto e = catalog("E_linear_z2", {{"c", c}, {"T", T}});
  for (double t : {0.0, 0.5, 1.7})
    for (double wt : {-1.0, 0.2}) {
      const double wT = wt + 0.8;
      const double rhs = wT + c * (T - t) - (wT - wt);
      EXPECT_NEAR(y_at(e, t, wt), rhs, 1e-14);
    }
}

TEST(Model, CatalogErrors) {
  EXPECT_THROW(catalog("nope"), InvalidArgument);
  EXPECT_THROW(catalog("C_linear_y", {{"lambda", std::numeric_limits<double>::infinity()}}), InvalidArgument);
  EXPECT_THROW(catalog("E_linear_z2", {{"c", std::nan("")}}), InvalidArgument);
  EXPECT_THROW(catalog("GBM_terminal", {{"sigma", std::nan("")}}), InvalidArgument);
  EXPECT_THROW(catalog("A_martingale", {{"T", -1.0}}), InvalidArgument);
  for (const auto& name : catalog_names()) EXPECT_NO_THROW(catalog(name));
}

TEST(Model, ExactDiscreteValues) {
  const auto mesh = make_uniform_mesh(4, 1.0);
  const auto inc = generate_increments(mesh, 1, 50, NoiseKind::gaussian, 2);
  const auto w = accumulate(inc);

  const auto gc = exact_discrete_scheme(catalog("C_linear_y", {{"lambda", 1.0}}), inc);
  for (std::size_t p = 0; p < 50; ++p) EXPECT_NEAR(gc.y_at(1, 1)(p, 0), 0.5625 * w.nodes[1](p, 0), 1e-15);

  const auto ge = exact_discrete_scheme(catalog("E_linear_z2", {{"c", 1.0}}), inc);
  for (std::size_t p = 0; p < 50; ++p) EXPECT_NEAR(ge.y_at(0, 0)(p, 0), 0.75, 1e-15);
  for (std::size_t p = 0; p < 50; ++p) EXPECT_NEAR(ge.y_at(1, 3)(p, 0), w.nodes[3](p, 0) + 0.25, 1e-15);

  const auto ga = exact_discrete_scheme(catalog("A_martingale"), inc);
  EXPECT_EQ(ga.z_at(2, 0).minCoeff(), 1.0);
  EXPECT_EQ(ga.z_at(2, 0).maxCoeff(), 1.0);

  EXPECT_THROW(exact_discrete_scheme(catalog("GBM_terminal"), inc), InvalidArgument);
}
