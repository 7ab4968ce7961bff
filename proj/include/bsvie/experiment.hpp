#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bsvie/analysis.hpp"
#include "bsvie/bsde_sys.hpp"
#include "bsvie/error.hpp"
#include "bsvie/scheme.hpp"

namespace bsvie {

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"solve", "converge", "bsde-approx", "moduli", "gronwall", "oracle-diff"};
  return names;
}

struct ExperimentConfig {
  std::string instance = "E_linear_z2";
  CatalogParams params;
  double horizon = 1.0;
  std::vector<std::size_t> levels{4, 8, 16, 32};
  NoiseKind noise = NoiseKind::gaussian;
  Backend backend = Backend::lsmc;
  std::size_t paths = 100000;
  std::uint64_t seed = 20240601;
  RegressionConfig regression{};
  std::size_t refinement = 8;
  std::size_t quadrature = 4;
  std::size_t gronwall_cases = 200;
  double min_slope = 0.8;
  std::string output = "bsvie_out";
  std::vector<std::string> suites;

  void validate() const {
    if (std::find(catalog_names().begin(), catalog_names().end(), instance) == catalog_names().end())
      throw InvalidArgument("config: unknown instance '" + instance + "'");
    if (levels.empty()) throw InvalidArgument("config: levels must not be empty");
    for (auto n : levels)
      if (n < 2) throw InvalidArgument("config: every level needs N >= 2");
    if (!(horizon > 0.0)) throw InvalidArgument("config: T must be positive");
    if (paths == 0) throw InvalidArgument("config: paths must be positive");
    if (refinement < 1) throw InvalidArgument("config: refinement must be at least 1");
    if (quadrature < 1) throw InvalidArgument("config: quadrature must be at least 1");
    regression.validate();
    for (const auto& s : suites)
      if (std::find(suite_names().begin(), suite_names().end(), s) == suite_names().end())
        throw InvalidArgument("config: unknown suite '" + s + "'");
  }

  ProblemInstance make_instance() const {
    auto p = params;
    p["T"] = horizon;
    return catalog(instance, p);
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string unquote(const std::string& v) {
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) return v.substr(1, v.size() - 2);
  return v;
}

inline std::vector<std::string> split_list(std::string v) {
  v = trim(v);
  if (!v.empty() && v.front() == '[') {
    if (v.back() != ']') throw InvalidArgument("config: unterminated list '" + v + "'");
    v = v.substr(1, v.size() - 2);
  }
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = unquote(trim(item));
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw InvalidArgument("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
  if (!v.empty() && v.find_first_not_of("0123456789") == std::string::npos) {
    try {
      return std::stoull(v);
    } catch (const std::exception&) {
      throw InvalidArgument("config: '" + key + "' is out of range");
    }
  }
  const double x = to_double(key, v);
  if (x < 0.0 || x != std::floor(x) || x > 1.8e19) throw InvalidArgument("config: '" + key + "' expects a nonnegative integer");
  return static_cast<std::uint64_t>(x);
}

}  // namespace detail

/// Sets one configuration key; keys match the config file and the CLI flags.
inline void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& raw) {
  using namespace detail;
  const std::string v = unquote(trim(raw));
  if (key == "instance") {
    cfg.instance = v;
  } else if (key.rfind("params.", 0) == 0) {
    cfg.params[key.substr(7)] = to_double(key, v);
  } else if (key == "T") {
    cfg.horizon = to_double(key, v);
  } else if (key == "levels") {
    cfg.levels.clear();
    for (const auto& s : split_list(raw)) cfg.levels.push_back(to_uint(key, s));
  } else if (key == "noise") {
    cfg.noise = noise_kind_from_string(v);
  } else if (key == "backend") {
    if (v == "tree") cfg.backend = Backend::tree;
    else if (v == "lsmc") cfg.backend = Backend::lsmc;
    else throw InvalidArgument("config: backend must be tree or lsmc");
  } else if (key == "paths") {
    cfg.paths = to_uint(key, v);
  } else if (key == "seed") {
    cfg.seed = to_uint(key, v);
  } else if (key == "degree") {
    cfg.regression.degree = static_cast<int>(to_uint(key, v));
  } else if (key == "ridge") {
    cfg.regression.ridge = to_double(key, v);
  } else if (key == "features") {
    if (v == "state_pair") cfg.regression.feature_mode = FeatureMode::state_pair;
    else if (v == "state_now") cfg.regression.feature_mode = FeatureMode::state_now;
    else throw InvalidArgument("config: features must be state_pair or state_now");
  } else if (key == "min_paths_per_coeff") {
    cfg.regression.min_paths_per_coeff = to_uint(key, v);
  } else if (key == "refinement") {
    cfg.refinement = to_uint(key, v);
  } else if (key == "quadrature") {
    cfg.quadrature = to_uint(key, v);
  } else if (key == "gronwall_cases") {
    cfg.gronwall_cases = to_uint(key, v);
  } else if (key == "min_slope") {
    cfg.min_slope = to_double(key, v);
  } else if (key == "output") {
    cfg.output = v;
  } else if (key == "suites") {
    cfg.suites = split_list(raw);
  } else {
    throw InvalidArgument("config: unknown key '" + key + "'");
  }
}

/// `key = value` lines; `#` starts a comment, `[section]` prefixes keys with `section.`.
inline ExperimentConfig parse_config(std::istream& in, ExperimentConfig cfg = {}) {
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']' && line.find('=') == std::string::npos) {
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidArgument("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    apply_setting(cfg, key, line.substr(eq + 1));
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig cfg = {}) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("config: cannot open '" + path + "'");
  return parse_config(in, std::move(cfg));
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct RunResult {
  std::vector<CheckResult> checks;
  std::vector<std::string> files;
  std::string summary;

  bool pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
  }
};

namespace detail {

inline std::string sci(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6e", x);
  return buf;
}

class Runner {
 public:
  explicit Runner(const ExperimentConfig& cfg) : cfg_(cfg), inst_(cfg.make_instance()) {}

  RunResult run() {
    for (const auto& s : cfg_.suites) {
      if (s == "solve") solve();
      else if (s == "converge") converge();
      else if (s == "bsde-approx") bsde_approx();
      else if (s == "moduli") moduli();
      else if (s == "gronwall") gronwall();
      else if (s == "oracle-diff") oracle_diff();
    }
    result_.summary = summary_.str();
    if (!cfg_.suites.empty()) write("summary.txt", result_.summary);
    return result_;
  }

 private:
  std::vector<std::size_t> sorted_levels() const {
    auto lv = cfg_.levels;
    std::sort(lv.begin(), lv.end());
    lv.erase(std::unique(lv.begin(), lv.end()), lv.end());
    return lv;
  }

  void write(const std::string& name, const std::string& content) {
    std::filesystem::create_directories(cfg_.output);
    const auto path = (std::filesystem::path(cfg_.output) / name).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << content;
    result_.files.push_back(path);
  }

  void check(const std::string& name, bool pass, const std::string& detail) {
    result_.checks.push_back({name, pass, detail});
    summary_ << (pass ? "PASS " : "FAIL ") << name << ": " << detail << "\n";
  }

  /// Fine increments on refine(uniform(max level), factor), shared by every level.
  IncrementBatch coupled_fine_noise(std::size_t factor) const {
    const auto lv = sorted_levels();
    const std::size_t top = lv.back();
    for (auto n : lv)
      if (top % n != 0) throw InvalidArgument("config: every level must divide the largest level for coupled noise");
    const auto fine = refine(make_uniform_mesh(top, cfg_.horizon), factor);
    if (cfg_.backend == Backend::tree) return tree_enumerate(fine).increments();
    return generate_increments(fine, inst_.dims.noise, cfg_.paths, cfg_.noise, cfg_.seed);
  }

  std::shared_ptr<const PathSpace> level_space(const IncrementBatch& fine_level, std::size_t factor) const {
    if (cfg_.backend == Backend::tree)
      return std::make_shared<const PathSpace>(make_tree_space(inst_, tree_enumerate(fine_level.mesh), factor));
    return std::make_shared<const PathSpace>(make_path_space(inst_, fine_level, factor));
  }

  SolveOptions solve_options() const {
    SolveOptions o;
    o.backend = cfg_.backend;
    o.regression = cfg_.regression;
    return o;
  }

  void emit_report(const std::string& stem, ErrorReport& report, const std::string& context) {
    report.fit();
    std::ostringstream csv;
    write_report_csv(csv, report);
    write(stem + ".csv", csv.str());
    auto js = report_json(report);
    js["instance"] = cfg_.instance;
    js["suite"] = stem;
    js["context"] = context;
    write(stem + ".json", js.dump(2) + "\n");
    summary_ << "[" << stem << "] " << context << "\n";
    for (const auto& e : report.entries)
      summary_ << "  N=" << e.cells << " |pi|=" << sci(e.mesh_norm) << " err_Y=" << sci(e.y.mean) << " err_Z=" << sci(e.z.mean)
               << " total=" << sci(e.total.mean) << " (se " << sci(e.total.se) << ")\n";
    if (report.rate) summary_ << "  slope=" << sci(report.rate->slope) << "\n";
  }

  void solve() {
    summary_ << "[solve] instance " << cfg_.instance << "\n";
    for (auto N : sorted_levels()) {
      const auto mesh = make_uniform_mesh(N, cfg_.horizon);
      std::shared_ptr<const PathSpace> space;
      if (cfg_.backend == Backend::tree) {
        space = std::make_shared<const PathSpace>(make_tree_space(inst_, tree_enumerate(mesh)));
      } else {
        space = std::make_shared<const PathSpace>(
            make_path_space(inst_, generate_increments(mesh, inst_.dims.noise, cfg_.paths, cfg_.noise, cfg_.seed)));
      }
      const auto sol = solve_bsvie(inst_, space, solve_options());
      std::ostringstream csv;
      write_solution_csv(csv, sol);
      write("solve_N" + std::to_string(N) + ".csv", csv.str());
      const auto ap = apriori_l2_check(sol, 1.0 + std::abs(inst_.x0.front()));
      check("solve N=" + std::to_string(N) + " a priori norms finite", ap.finite,
            "sum dt|Y|^2=" + sci(ap.y_norm) + " sum dt dt|Z|^2=" + sci(ap.z_norm));
    }
  }

  void converge() {
    const auto lv = sorted_levels();
    const std::size_t Q = cfg_.quadrature;
    const auto fine = coupled_fine_noise(Q);
    ErrorReport report;
    for (std::size_t i = 0; i < lv.size(); ++i) {
      const std::size_t N = lv[i];
      const auto fine_level = coarsen_increments(fine, lv.back() / N);
      const auto sol = solve_bsvie(inst_, level_space(fine_level, Q), solve_options());
      auto entry = scheme_error(sol, fine_level);
      entry.level = i;
      report.entries.push_back(entry);
    }
    emit_report("converge", report, "target: squared error <= C|pi|, fitted slope >= " + sci(cfg_.min_slope));
    if (report.rate) {
      check("converge slope", report.rate->slope >= cfg_.min_slope,
            "slope " + sci(report.rate->slope) + " vs minimum " + sci(cfg_.min_slope));
    } else {
      summary_ << "  (fewer than 3 levels: no slope fitted)\n";
    }
  }

  void bsde_approx() {
    const auto lv = sorted_levels();
    ErrorReport report;
    for (std::size_t i = 0; i < lv.size(); ++i) {
      const auto mesh = make_uniform_mesh(lv[i], cfg_.horizon);
      const auto space =
          make_inner_space(inst_, mesh, cfg_.refinement, cfg_.backend, cfg_.paths, cfg_.noise, cfg_.seed + i);
      BsdeSystemOptions o{cfg_.backend, cfg_.regression};
      const auto sol = solve_bsde_system(inst_, mesh, cfg_.refinement, space, o);
      const auto e = bsde_approx_error(sol);
      report.entries.push_back({i, lv[i], mesh.mesh_norm(), e.y, e.z, e.total});
    }
    emit_report("bsde_approx", report, "target: BSDE system error decreases to 0 as |pi| -> 0");
    for (std::size_t i = 1; i < report.entries.size(); ++i) {
      const auto& a = report.entries[i - 1].total;
      const auto& b = report.entries[i].total;
      const double band = 3.0 * std::hypot(a.se, b.se);
      check("bsde-approx decrease N=" + std::to_string(lv[i - 1]) + "->" + std::to_string(lv[i]), b.mean < a.mean + band,
            sci(a.mean) + " -> " + sci(b.mean) + " (3 se band " + sci(band) + ")");
    }
  }

  void moduli() {
    const auto lv = sorted_levels();
    const std::size_t Q = cfg_.quadrature;
    const auto fine = coupled_fine_noise(Q);
    ErrorReport report;
    for (std::size_t i = 0; i < lv.size(); ++i) {
      const auto mesh = make_uniform_mesh(lv[i], cfg_.horizon);
      const auto fine_level = coarsen_increments(fine, lv.back() / lv[i]);
      const auto r = regularity_moduli(inst_, mesh, fine_level, cfg_.backend, cfg_.regression);
      report.entries.push_back({i, lv[i], mesh.mesh_norm(), r.y, r.z, r.total});
    }
    emit_report("moduli", report, "target: E(Y;pi) + E(Z;pi) = O(|pi|)");
    if (report.rate)
      check("moduli slope", report.rate->slope >= cfg_.min_slope,
            "slope " + sci(report.rate->slope) + " vs minimum " + sci(cfg_.min_slope));
  }

  void gronwall() {
    std::mt19937_64 rng(cfg_.seed);
    std::ostringstream csv;
    csv << "lemma,cases,failures,max_ratio\n";
    for (const bool continuous : {true, false}) {
      std::size_t failures = 0;
      double worst = 0.0;
      for (std::size_t i = 0; i < cfg_.gronwall_cases; ++i) {
        const auto d = random_gronwall_data(rng, continuous);
        const auto r = continuous ? gronwall_cont_evaluate(d) : gronwall_disc_evaluate(d);
        if (!r.holds) ++failures;
        if (r.rhs > 0.0) worst = std::max(worst, r.lhs / r.rhs);
      }
      const std::string lemma = continuous ? "continuous" : "discrete";
      csv << lemma << ',' << cfg_.gronwall_cases << ',' << failures << ',' << fmt(worst) << '\n';
      check("gronwall " + lemma, failures == 0,
            std::to_string(failures) + " failures in " + std::to_string(cfg_.gronwall_cases) +
                " cases, largest lhs/rhs " + sci(worst));
    }
    write("gronwall.csv", csv.str());
    summary_ << "[gronwall] target: int a <= (2K+1) exp(2K(1+K)T) int (b + c)\n";
  }

  void oracle_diff() {
    std::ostringstream csv;
    csv << "N,brute_force_diff,exact_diff,msolution_residual\n";
    for (auto N : sorted_levels()) {
      const auto mesh = make_uniform_mesh(N, cfg_.horizon);
      const auto sol = solve_bsvie_tree(inst_, mesh);
      const auto grid = sol.to_grid();
      const double bf = max_grid_difference(grid, brute_force_tree(inst_, mesh));
      double ex = std::nan("");
      if (inst_.closed_form && inst_.closed_form->has_exact_discrete())
        ex = max_grid_difference(grid, exact_discrete_scheme(inst_, sol.space().increments));
      const double res = msolution_residual(sol);
      csv << N << ',' << fmt(bf) << ',' << fmt(ex) << ',' << fmt(res) << '\n';
      const bool pass = bf <= 1e-10 && (std::isnan(ex) || ex <= 1e-10) && res <= 1e-12;
      check("oracle-diff N=" + std::to_string(N), pass,
            "brute force " + sci(bf) + ", closed form " + sci(ex) + ", M-solution residual " + sci(res));
    }
    write("oracle_diff.csv", csv.str());
    summary_ << "[oracle-diff] target: tree solver equals the independent oracles to 1e-10\n";
  }

  const ExperimentConfig& cfg_;
  ProblemInstance inst_;
  RunResult result_;
  std::ostringstream summary_;
};

}  // namespace detail

/// Runs every configured suite. Throws InvalidArgument for configuration
/// problems and NumericalError for numerical failures.
inline RunResult run(const ExperimentConfig& cfg) {
  cfg.validate();
  return detail::Runner(cfg).run();
}

}  // namespace bsvie
