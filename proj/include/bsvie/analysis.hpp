#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bsvie/bsde_sys.hpp"
#include "bsvie/error.hpp"
#include "bsvie/quadrature.hpp"
#include "bsvie/scheme.hpp"

namespace bsvie {

// ---------------------------------------------------------------------------
// Scheme error
// ---------------------------------------------------------------------------

struct ErrorEntry {
  std::size_t level = 0;
  std::size_t cells = 0;
  double mesh_norm = 0.0;
  Estimate y;
  Estimate z;
  Estimate total;
};

/// sum_k E int_{cell k} |Y(t) - Y^pi(t_k, t_k)|^2 dt
///   + sum_{k,l} E int_{cell k} int_{cell l} |Z(t, s) - Z^pi(t_k, t_l)|^2 ds dt
///
/// `ref` lives on a Q-fold refinement of the scheme mesh, on the same paths.
inline ErrorEntry scheme_error(const SchemeSolution& sol, const ClosedFormField& ref) {
  const TimeMesh& mesh = sol.mesh();
  const TimeMesh& fine = ref.mesh();
  const std::size_t N = mesh.cells();
  if (fine.cells() % N != 0 || !is_refinement(mesh, fine, fine.cells() / N))
    throw InvalidArgument("scheme_error: quadrature mesh is not a refinement of the scheme mesh");
  if (ref.paths() != sol.space().paths()) throw InvalidArgument("scheme_error: reference and scheme paths differ");
  const std::size_t Q = fine.cells() / N;
  const auto Mi = static_cast<Eigen::Index>(ref.paths());
  Eigen::VectorXd ey = Eigen::VectorXd::Zero(Mi);
  Eigen::VectorXd ez = Eigen::VectorXd::Zero(Mi);

  for (std::size_t k = 0; k < N; ++k) {
    const auto w = cell_weights(Q, mesh.step(k));
    const PathMatrix diag = sol.diagonal(k);
    for (std::size_t i = 0; i <= Q; ++i) detail::add_weighted_sq(ey, w[i], ref.y(k, k * Q + i), diag);
  }

  for (std::size_t k = 0; k < N; ++k) {
    const auto wt = cell_weights(Q, mesh.step(k));
    for (std::size_t l = 0; l < N; ++l) {
      const auto ws = cell_weights(Q, mesh.step(l));
      const PathMatrix zs = sol.z(k, l);
      if (ref.deterministic_z()) {
        std::vector<PathMatrix> zr;
        std::vector<double> wij;
        for (std::size_t i = 0; i <= Q; ++i)
          for (std::size_t j = 0; j <= Q; ++j) {
            zr.push_back(ref.z(k, k * Q + i, l * Q + j));
            wij.push_back(wt[i] * ws[j]);
          }
        ez += detail::deterministic_sq_error(zr, wij, mesh.step(k) * mesh.step(l), zs);
      } else {
        for (std::size_t i = 0; i <= Q; ++i)
          for (std::size_t j = 0; j <= Q; ++j)
            detail::add_weighted_sq(ez, wt[i] * ws[j], ref.z(k, k * Q + i, l * Q + j), zs);
      }
    }
  }
  ErrorEntry e;
  e.cells = N;
  e.mesh_norm = mesh.mesh_norm();
  e.y = estimate(ey);
  e.z = estimate(ez);
  e.total = estimate(ey + ez);
  return e;
}

/// Closed-form reference from the fine increments the scheme's noise was coarsened from.
inline ErrorEntry scheme_error(const SchemeSolution& sol, const IncrementBatch& fine) {
  const auto& inst = sol.instance();
  if (!inst.closed_form) throw InvalidArgument("scheme_error: no reference available for '" + inst.name + "'");
  return scheme_error(sol, ClosedFormField(inst, accumulate(fine)));
}

// ---------------------------------------------------------------------------
// Rates
// ---------------------------------------------------------------------------

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// Least-squares line through (log |pi|, log error).
inline RateFit fit_rate(const std::vector<std::pair<double, double>>& levels) {
  if (levels.size() < 3) throw InvalidArgument("fit_rate: at least 3 levels required");
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (const auto& [h, e] : levels) {
    if (!(h > 0.0)) throw InvalidArgument("fit_rate: mesh norms must be positive");
    if (!(e > 0.0)) throw InvalidArgument("fit_rate: error values must be positive");
    const double x = std::log(h), y = std::log(e);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(levels.size());
  const double den = n * sxx - sx * sx;
  if (!(den > 1e-12 * n * sxx)) throw InvalidArgument("fit_rate: mesh norms must not all coincide");
  RateFit r;
  r.slope = (n * sxy - sx * sy) / den;
  r.intercept = (sy - r.slope * sx) / n;
  return r;
}

// ---------------------------------------------------------------------------
// Gronwall-type inequalities
// ---------------------------------------------------------------------------

class HypothesisViolation : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// A finite measure space {x_0, ..., x_{S-1}} with weights mu.
struct FiniteMeasure {
  std::vector<double> weights;
  std::size_t size() const { return weights.size(); }
};

/// Sequences a_k, b_k, c_k on the cells of a mesh and zeta_{k,l}(x).
/// zeta is stored for every pair, index (k * N + l) * S + x; only l < k is read
/// by the discrete lemma, l <= k by the continuous one.
struct GronwallData {
  TimeMesh mesh = make_uniform_mesh(2, 1.0);
  double K = 1.0;
  std::vector<double> a, b, c;
  FiniteMeasure measure;
  std::vector<double> zeta;

  double z(std::size_t k, std::size_t l, std::size_t x) const {
    return zeta[(k * mesh.cells() + l) * measure.size() + x];
  }
};

struct GronwallResult {
  double lhs = 0.0;
  double rhs = 0.0;
  double weighted_lhs = 0.0;
  double weighted_rhs = 0.0;
  bool holds = false;
};

namespace detail {

inline constexpr double gronwall_tol = 1e-12;

inline void check_gronwall_shape(const GronwallData& d) {
  const std::size_t N = d.mesh.cells();
  if (!(d.K > 0.0)) throw InvalidArgument("gronwall: K must be positive");
  if (d.a.size() != N || d.b.size() != N || d.c.size() != N)
    throw InvalidArgument("gronwall: a, b, c need one value per cell");
  if (d.zeta.size() != N * N * d.measure.size()) throw InvalidArgument("gronwall: zeta has the wrong size");
  auto nonneg = [](const std::vector<double>& v, const char* name) {
    for (double x : v)
      if (!(x >= 0.0) || !std::isfinite(x)) throw HypothesisViolation(std::string("gronwall: ") + name + " must be nonnegative");
  };
  nonneg(d.a, "a");
  nonneg(d.b, "b");
  nonneg(d.c, "c");
  nonneg(d.zeta, "zeta");
  nonneg(d.measure.weights, "mu");
}

/// int_S (sum_{l > k} dt_l zeta_{l,k})^2 dmu
inline double upper_zeta_term(const GronwallData& d, std::size_t k) {
  const std::size_t N = d.mesh.cells();
  double total = 0.0;
  for (std::size_t x = 0; x < d.measure.size(); ++x) {
    double s = 0.0;
    for (std::size_t l = k + 1; l < N; ++l) s += d.mesh.step(l) * d.z(l, k, x);
    total += d.measure.weights[x] * s * s;
  }
  return total;
}

/// int_S sum_{l < k} dt_l zeta_{k,l}^2 dmu, plus the diagonal cell when `diagonal`.
inline double lower_zeta_term(const GronwallData& d, std::size_t k, bool diagonal) {
  double total = 0.0;
  const std::size_t last = diagonal ? k + 1 : k;
  for (std::size_t x = 0; x < d.measure.size(); ++x)
    for (std::size_t l = 0; l < last; ++l) total += d.measure.weights[x] * d.mesh.step(l) * d.z(k, l, x) * d.z(k, l, x);
  return total;
}

inline double tail_sum(const GronwallData& d, std::size_t k) {
  double s = 0.0;
  for (std::size_t l = k + 1; l < d.mesh.cells(); ++l) s += d.mesh.step(l) * d.a[l];
  return s;
}

inline bool leq(double lhs, double rhs) { return lhs <= rhs + gronwall_tol * std::max(1.0, std::abs(rhs)); }

inline GronwallResult gronwall_conclusion(const GronwallData& d) {
  const double K = d.K;
  const double gamma = 2.0 * K * (1.0 + K);
  const double T = d.mesh.horizon();
  GronwallResult r;
  for (std::size_t k = 0; k < d.mesh.cells(); ++k) {
    const double G = (std::exp(gamma * d.mesh.time(k + 1)) - std::exp(gamma * d.mesh.time(k))) / gamma;
    r.lhs += d.mesh.step(k) * d.a[k];
    r.rhs += d.mesh.step(k) * (d.b[k] + d.c[k]);
    r.weighted_lhs += G * d.a[k];
    r.weighted_rhs += G * (2.0 * K * d.b[k] + d.c[k]);
  }
  r.rhs *= (2.0 * K + 1.0) * std::exp(gamma * T);
  r.holds = leq(r.lhs, r.rhs) && leq(r.weighted_lhs, r.weighted_rhs);
  return r;
}

}  // namespace detail

/// Discrete lemma: checks the hypotheses exactly and returns the conclusion
///   sum dt_k a_k <= (2K + 1) e^{2K(1+K)T} sum dt_k (b_k + c_k)
/// together with its e^{gamma t}-weighted form at gamma = 2K(1+K).
inline GronwallResult gronwall_disc_evaluate(const GronwallData& d) {
  detail::check_gronwall_shape(d);
  const std::size_t N = d.mesh.cells();
  for (std::size_t k = 0; k < N; ++k) {
    const double rhs = d.K * (d.b[k] + detail::tail_sum(d, k) + detail::upper_zeta_term(d, k));
    if (!detail::leq(d.a[k], rhs))
      throw HypothesisViolation("gronwall (discrete): first hypothesis fails at k=" + std::to_string(k));
    if (k >= 1 && !detail::leq(detail::lower_zeta_term(d, k, false), d.K * (d.a[k] + d.c[k])))
      throw HypothesisViolation("gronwall (discrete): second hypothesis fails at k=" + std::to_string(k));
  }
  return detail::gronwall_conclusion(d);
}

inline bool gronwall_disc_check(const GronwallData& d) { return gronwall_disc_evaluate(d).holds; }

/// Continuous lemma for a, b, c piecewise constant on the cells of d.mesh and
/// zeta(t, s, x) = zeta_{k,l}(x) on cell k x cell l (s <= t).
///
/// For step functions the a.e. hypotheses reduce to their worst case at the
/// right end of each cell, where int_t^T a and the zeta tail are smallest and
/// int_0^t zeta^2 is largest (it then includes the whole diagonal cell).
inline GronwallResult gronwall_cont_evaluate(const GronwallData& d) {
  detail::check_gronwall_shape(d);
  const std::size_t N = d.mesh.cells();
  for (std::size_t k = 0; k < N; ++k) {
    const double rhs = d.K * (d.b[k] + detail::tail_sum(d, k) + detail::upper_zeta_term(d, k));
    if (!detail::leq(d.a[k], rhs))
      throw HypothesisViolation("gronwall (continuous): first hypothesis fails on cell " + std::to_string(k));
    if (!detail::leq(detail::lower_zeta_term(d, k, true), d.K * (d.a[k] + d.c[k])))
      throw HypothesisViolation("gronwall (continuous): second hypothesis fails on cell " + std::to_string(k));
  }
  return detail::gronwall_conclusion(d);
}

inline bool gronwall_cont_check(const GronwallData& d) { return gronwall_cont_evaluate(d).holds; }

/// Random data projected onto the hypothesis set: b, c, zeta, mu are drawn
/// freely, a_k is a random fraction of the first hypothesis' right side
/// (built backwards), and c_k is raised where the second hypothesis needs it.
inline GronwallData random_gronwall_data(std::mt19937_64& rng, bool continuous) {
  std::uniform_int_distribution<std::size_t> cells(2, 12), points(1, 4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t N = cells(rng);
  const std::size_t S = points(rng);
  const double T = 0.25 + 2.0 * unit(rng);

  std::vector<double> pts{0.0};
  for (std::size_t k = 0; k < N; ++k) pts.push_back(pts.back() + 0.1 + unit(rng));
  for (auto& p : pts) p *= T / pts.back();
  pts.back() = T;

  GronwallData d;
  d.mesh = TimeMesh(pts);
  d.K = 0.1 + 2.9 * unit(rng);
  d.measure.weights.resize(S);
  for (auto& w : d.measure.weights) w = unit(rng);
  d.b.resize(N);
  d.c.resize(N);
  d.a.assign(N, 0.0);
  for (auto& x : d.b) x = unit(rng) < 0.2 ? 0.0 : 3.0 * unit(rng);
  for (auto& x : d.c) x = unit(rng) < 0.2 ? 0.0 : 3.0 * unit(rng);
  d.zeta.assign(N * N * S, 0.0);
  for (std::size_t k = 0; k < N; ++k)
    for (std::size_t l = 0; l < (continuous ? k + 1 : k); ++l)
      for (std::size_t x = 0; x < S; ++x) d.zeta[(k * N + l) * S + x] = 2.0 * unit(rng);

  for (std::size_t k = N; k-- > 0;)
    d.a[k] = unit(rng) * d.K * (d.b[k] + detail::tail_sum(d, k) + detail::upper_zeta_term(d, k));
  for (std::size_t k = 0; k < N; ++k) {
    const double need = detail::lower_zeta_term(d, k, continuous) / d.K - d.a[k];
    if (need > d.c[k]) d.c[k] = need * (1.0 + 1e-9);
  }
  return d;
}

// ---------------------------------------------------------------------------
// A priori bounds
// ---------------------------------------------------------------------------

struct AprioriReport {
  double y_norm = 0.0;  ///< sum_k dt_k E|Y(t_k, t_k)|^2, or sum_k dt_k E sup_s |Y(t_k, s)|^2
  double z_norm = 0.0;  ///< sum_{k,l} dt_k dt_l E|Z(t_k, t_l)|^2, or sum_k dt_k E int |Z(t_k, s)|^2 ds
  double y_ratio = 0.0;
  double z_ratio = 0.0;
  bool finite = false;
};

namespace detail {

inline AprioriReport finish_apriori(AprioriReport r, double bound) {
  const double b2 = bound * bound;
  r.y_ratio = b2 > 0.0 ? r.y_norm / b2 : std::numeric_limits<double>::infinity();
  r.z_ratio = b2 > 0.0 ? r.z_norm / b2 : std::numeric_limits<double>::infinity();
  r.finite = std::isfinite(r.y_norm) && std::isfinite(r.z_norm);
  return r;
}

}  // namespace detail

inline AprioriReport apriori_l2_check(const SchemeSolution& sol, double bound) {
  const auto& mesh = sol.mesh();
  const std::size_t N = mesh.cells();
  AprioriReport r;
  for (std::size_t k = 0; k < N; ++k) {
    r.y_norm += mesh.step(k) * sol.stats(k, k).second_moment_y;
    for (std::size_t l = 0; l < N; ++l) r.z_norm += mesh.step(k) * mesh.step(l) * sol.stats(k, l).second_moment_z;
  }
  return detail::finish_apriori(r, bound);
}

inline AprioriReport apriori_l2_check(const BsdeSystemSolution& sol, double bound) {
  const auto& mesh = sol.outer_mesh();
  AprioriReport r;
  for (std::size_t k = 0; k < mesh.cells(); ++k) {
    r.y_norm += mesh.step(k) * sol.norms(k).sup_y;
    r.z_norm += mesh.step(k) * sol.norms(k).int_z;
  }
  return detail::finish_apriori(r, bound);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct ErrorReport {
  std::vector<ErrorEntry> entries;
  std::optional<RateFit> rate;

  void fit() {
    if (entries.size() < 3) {
      rate.reset();
      return;
    }
    std::vector<std::pair<double, double>> pts;
    for (const auto& e : entries) pts.emplace_back(e.mesh_norm, e.total.mean);
    rate = fit_rate(pts);
  }
};

namespace detail {

inline std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10e", x);
  return buf;
}

}  // namespace detail

/// level,N,mesh_norm,err_Y,err_Z,err_total,se_Y,se_Z,slope; the fitted slope is the last row.
inline void write_report_csv(std::ostream& os, const ErrorReport& report) {
  using detail::fmt;
  os << "level,N,mesh_norm,err_Y,err_Z,err_total,se_Y,se_Z,slope\n";
  for (const auto& e : report.entries)
    os << e.level << ',' << e.cells << ',' << fmt(e.mesh_norm) << ',' << fmt(e.y.mean) << ',' << fmt(e.z.mean) << ','
       << fmt(e.total.mean) << ',' << fmt(e.y.se) << ',' << fmt(e.z.se) << ",\n";
  os << "fit,,,,,,,," << (report.rate ? fmt(report.rate->slope) : std::string("nan")) << '\n';
}

inline nlohmann::json report_json(const ErrorReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : report.entries)
    rows.push_back({{"level", e.level},
                    {"N", e.cells},
                    {"mesh_norm", e.mesh_norm},
                    {"err_Y", e.y.mean},
                    {"err_Z", e.z.mean},
                    {"err_total", e.total.mean},
                    {"se_Y", e.y.se},
                    {"se_Z", e.z.se},
                    {"slope", nullptr}});
  nlohmann::json out;
  out["levels"] = rows;
  out["slope"] = report.rate ? nlohmann::json(report.rate->slope) : nlohmann::json(nullptr);
  out["intercept"] = report.rate ? nlohmann::json(report.rate->intercept) : nlohmann::json(nullptr);
  return out;
}

}  // namespace bsvie
