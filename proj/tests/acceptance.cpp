// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "bsvie/analysis.hpp"
#include "bsvie/bsde_sys.hpp"
#include "bsvie/forward.hpp"
#include "bsvie/scheme.hpp"
#include "oracles.hpp"

using namespace bsvie;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

constexpr std::uint64_t kSeed = 20240601;

Outcome oracle_equivalence() {
  double worst = 0.0;
  for (const auto& [name, params] : std::vector<std::pair<std::string, CatalogParams>>{
           {"A_martingale", {}}, {"C_linear_y", {{"lambda", 1.0}}}, {"E_linear_z2", {{"c", 1.0}}}}) {
    const auto inst = catalog(name, params);
    for (std::size_t N : {4u, 6u, 8u}) {
      const auto mesh = make_uniform_mesh(N, 1.0);
      const auto sol = solve_bsvie_tree(inst, mesh);
      const auto grid = sol.to_grid();
      worst = std::max(worst, max_grid_difference(grid, brute_force_tree(inst, mesh)));
      worst = std::max(worst, max_grid_difference(grid, exact_discrete_scheme(inst, sol.space().increments)));
    }
  }
  return {worst <= 1e-10, "max diff " + num(worst) + " (<= 1e-10)"};
}

Outcome exact_error_value() {
  const auto inst = catalog("E_linear_z2", {{"c", 1.0}});
  const auto mesh = make_uniform_mesh(4, 1.0);
  const auto fine = generate_increments(refine(mesh, 4), 1, 200000, NoiseKind::gaussian, kSeed);
  const auto sol = solve_bsvie(inst, coarsen_increments(fine, 4), {});
  const auto e = scheme_error(sol, fine);
  const double target = oracles::linear_z2_scheme_error(4, 1.0, 1.0);
  const bool y_ok = std::abs(e.y.mean - target) <= 3.0 * e.y.se;
  const double z_floor = std::max(3.0 * e.z.se, 1e-12);
  const bool z_ok = std::abs(e.z.mean) <= z_floor;
  return {y_ok && z_ok, "Y " + num(e.y.mean) + " vs " + num(target) + " (3 se " + num(3.0 * e.y.se) + "), Z " +
                            num(e.z.mean) + " (floor " + num(z_floor) + ")"};
}

Outcome convergence_rate() {
  const std::vector<std::size_t> levels{8, 16, 32, 64};
  const std::size_t Q = 4;
  bool ok = true;
  std::string detail;
  for (const std::string name : {"C_linear_y", "E_linear_z2"}) {
    const auto inst = catalog(name);
    const auto fine = generate_increments(refine(make_uniform_mesh(64, 1.0), Q), 1, 100000, NoiseKind::gaussian, kSeed);
    std::vector<std::pair<double, double>> pts;
    for (auto N : levels) {
      const auto fine_level = coarsen_increments(fine, 64 / N);
      const auto sol = solve_bsvie(inst, coarsen_increments(fine_level, Q), {});
      const auto e = scheme_error(sol, fine_level);
      pts.emplace_back(1.0 / static_cast<double>(N), e.total.mean);
    }
    const double slope = fit_rate(pts).slope;
    ok = ok && slope >= 0.8;
    detail += name + " slope " + num(slope) + " ";
  }
  return {ok, detail + "(>= 0.8)"};
}

Outcome forward_rate() {
  const auto inst = catalog("GBM_terminal", {{"mu", 0.1}, {"sigma", 0.4}, {"x0", 1.0}});
  std::vector<std::pair<double, double>> pts;
  for (std::size_t N : {8u, 16u, 32u, 64u}) {
    const auto inc = generate_increments(make_uniform_mesh(N, 1.0), 1, 100000, NoiseKind::gaussian, kSeed + N);
    const auto e = forward_strong_error(euler_maruyama(inst, inc), exact_paths(inst, inc));
    pts.emplace_back(1.0 / static_cast<double>(N), e.value);
  }
  const double slope = fit_rate(pts).slope;
  return {slope >= 0.8 && slope <= 1.3, "slope " + num(slope) + " (in [0.8, 1.3])"};
}

Outcome msolution_identity() {
  double worst = 0.0;
  for (const auto& name : catalog_names())
    for (std::size_t N = 2; N <= 8; ++N)
      worst = std::max(worst, msolution_residual(solve_bsvie_tree(catalog(name), make_uniform_mesh(N, 1.0))));
  return {worst <= 1e-12, "max residual " + num(worst) + " (<= 1e-12)"};
}

Outcome gronwall_suites() {
  std::mt19937_64 rng(kSeed);
  std::size_t failures[2] = {0, 0};
  for (int lemma = 0; lemma < 2; ++lemma)
    for (int i = 0; i < 200; ++i) {
      const bool continuous = lemma == 1;
      const auto d = random_gronwall_data(rng, continuous);
      if (!oracles::gronwall_hypotheses_pointwise(d, continuous)) ++failures[lemma];
      else if (!(continuous ? gronwall_cont_check(d) : gronwall_disc_check(d))) ++failures[lemma];
    }
  return {failures[0] == 0 && failures[1] == 0, "discrete " + std::to_string(failures[0]) + "/200, continuous " +
                                                    std::to_string(failures[1]) + "/200 failures"};
}

Outcome regularity_moduli_check() {
  const auto inst = catalog("E_linear_z2");
  const std::vector<std::size_t> levels{4, 8, 16};
  const auto fine = generate_increments(refine(make_uniform_mesh(16, 1.0), 4), 1, 100000, NoiseKind::gaussian, kSeed);
  bool ok = true;
  std::string detail;
  std::vector<double> values;
  for (auto N : levels) {
    const auto mesh = make_uniform_mesh(N, 1.0);
    const auto m = regularity_moduli(inst, mesh, coarsen_increments(fine, 16 / N));
    const double target = oracles::linear_z2_moduli(N, 1.0, 1.0);
    ok = ok && std::abs(m.total.mean - target) <= 3.0 * m.total.se;
    values.push_back(m.total.mean);
    detail += "N=" + std::to_string(N) + " " + num(m.total.mean) + " vs " + num(target) + "; ";
  }
  for (std::size_t i = 1; i < values.size(); ++i) {
    const double ratio = values[i - 1] / values[i];
    ok = ok && ratio >= 1.6 && ratio <= 2.6;
    detail += "ratio " + num(ratio) + " ";
  }
  return {ok, detail + "(3 se, ratios in [1.6, 2.6])"};
}

Outcome bsde_approximation() {
  const auto inst = catalog("E_linear_z2");
  std::vector<Estimate> values;
  std::string detail;
  for (std::size_t N : {4u, 8u, 16u}) {
    const auto outer = make_uniform_mesh(N, 1.0);
    const auto space = make_inner_space(inst, outer, 8, Backend::lsmc, 100000, NoiseKind::gaussian, kSeed + N);
    const auto e = bsde_approx_error(solve_bsde_system(inst, outer, 8, space, {}));
    values.push_back(e.total);
    detail += "N=" + std::to_string(N) + " " + num(e.total.mean) + " ";
  }
  bool ok = true;
  for (std::size_t i = 1; i < values.size(); ++i)
    ok = ok && values[i].mean < values[i - 1].mean + 3.0 * std::hypot(values[i].se, values[i - 1].se);
  return {ok, detail + "(decreasing within 3 se)"};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const auto root = std::filesystem::temp_directory_path() / "bsvie_acceptance_determinism";
  std::filesystem::remove_all(root);
  std::string csv[2];
  const char* threads[2] = {"1", "4"};
  for (int i = 0; i < 2; ++i) {
    const auto out = root / (std::string("t") + threads[i]);
    const std::string cmd = std::string("BSVIE_THREADS=") + threads[i] + " \"" + BSVIE_CLI_PATH +
                            "\" converge --instance E_linear_z2 --levels 4,8,16 --paths 20000 --seed 7 --output \"" +
                            out.string() + "\" > /dev/null";
    const int rc = std::system(cmd.c_str());
    if (rc != 0) return {false, "CLI exited with status " + std::to_string(rc)};
    csv[i] = slurp(out / "converge.csv");
  }
  const bool same = !csv[0].empty() && csv[0] == csv[1];
  return {same, same ? "converge.csv identical for 1 and 4 threads (" + std::to_string(csv[0].size()) + " bytes)"
                     : "converge.csv differs between thread counts"};
}

}  // namespace

int main() {
  struct Criterion {
    std::string name;
    std::function<Outcome()> run;
    double budget_s;  // 0: no runtime bound
  };
  const std::vector<Criterion> criteria{
      {"oracle equivalence (tree mode)", oracle_equivalence, 10.0},
      {"exact error value, E at N=4", exact_error_value, 60.0},
      {"convergence rate, C and E", convergence_rate, 600.0},
      {"forward strong rate, GBM", forward_rate, 120.0},
      {"M-solution identity", msolution_identity, 0.0},
      {"Gronwall suites", gronwall_suites, 0.0},
      {"regularity moduli, E", regularity_moduli_check, 0.0},
      {"BSDE system approximation, E", bsde_approximation, 0.0},
      {"determinism across thread counts", determinism, 0.0},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& c = criteria[i];
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::string timing = num(secs) + " s";
    if (c.budget_s > 0.0) {
      timing += " (< " + num(c.budget_s) + " s)";
      if (secs >= c.budget_s) o.pass = false;
    }
    std::printf("[%s] %zu %s: %s [%s]\n", o.pass ? "PASS" : "FAIL", i + 1, c.name.c_str(), o.detail.c_str(),
                timing.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
