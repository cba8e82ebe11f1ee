#pragma once

// Experiment driver: YAML run configs, sweeps over list parameters, CSV
// artifacts and manifests that can be replayed and hash-checked.

#include "bdsde/bdsde.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#ifndef BDSDE_VERSION
#define BDSDE_VERSION "dev"
#endif

namespace bdsde::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitCellFailure = 3;
inline constexpr int kExitReplayMismatch = 4;

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& source, int line, const std::string& what)
      : std::runtime_error(source + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"simulate-paths", "verify-tanaka", "solve-linear", "solve",
                                          "picard-trace",   "a-priori",      "ladder",       "feynman-kac"};
  return c;
}

struct RunConfig {
  std::string experiment = "run";
  std::string command;
  std::string problem = "lipschitz_smooth";
  std::map<std::string, double> params;
  std::string xi_mode = "const";
  double t0 = 0.0;
  double T = 1.0;
  std::vector<std::size_t> n_steps{32};
  std::size_t paths = 1024;
  std::uint64_t seed = 1;
  std::vector<double> p{2.0};
  int basis_degree = 3;
  std::size_t group_size = 32;
  double tol = 1e-6;
  std::size_t max_iter = 100;
  std::optional<double> gamma;  // unset: lambda^2/eps + lambda + 1 - alpha
  std::vector<double> scales{1.0};
  std::vector<double> ladder_n{2, 4, 8, 16};
  std::vector<double> ladder_i{1, 4};
  std::vector<int> eps_exponents{0, 4, 8, 12, 16, 20};
  double tanaka_x0 = 1.0;
  double fk_x = 0.5;
  double fk_sigma = 1.0;
  double fk_c = 0.0;
  std::string fk_terminal = "square";
  std::size_t export_paths = 8;
  std::size_t probes = 10000;
  std::string output = "out";
};

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

inline int line_of(const YAML::Node& n) { return n.Mark().line >= 0 ? n.Mark().line + 1 : 0; }

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& at, const std::string& what) const {
    throw ConfigError(source_, line_of(at), what);
  }

  template <class T>
  T scalar(const YAML::Node& n, const std::string& key) const {
    if (!n.IsScalar()) fail(n, key + ": expected a scalar");
    try {
      return n.as<T>();
    } catch (const YAML::Exception&) {
      fail(n, key + ": cannot read '" + n.Scalar() + "'");
    }
  }

  template <class T>
  std::vector<T> list(const YAML::Node& n, const std::string& key) const {
    std::vector<T> out;
    if (n.IsScalar()) {
      out.push_back(scalar<T>(n, key));
    } else if (n.IsSequence()) {
      for (const auto& e : n) out.push_back(scalar<T>(e, key));
    } else {
      fail(n, key + ": expected a value or a list");
    }
    if (out.empty()) fail(n, key + ": empty list");
    return out;
  }

  void only_keys(const YAML::Node& map, const std::vector<std::string>& allowed, const std::string& where) const {
    if (!map.IsMap()) fail(map, where + ": expected a mapping");
    for (const auto& kv : map) {
      const auto key = kv.first.as<std::string>();
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
        fail(kv.first, where + ": unknown key '" + key + "'");
    }
  }

 private:
  std::string source_;
};

}  // namespace detail

/// Value checks shared by file parsing and command-line overrides.
/// `line_of_key` maps keys to config lines for the error message.
inline void validate(const RunConfig& c, const std::string& source = "config",
                     const std::map<std::string, int>& line_of_key = {}) {
  auto fail = [&](const std::string& key, const std::string& what) {
    auto it = line_of_key.find(key);
    throw ConfigError(source, it == line_of_key.end() ? 0 : it->second, what);
  };
  if (!c.command.empty() && std::find(commands().begin(), commands().end(), c.command) == commands().end())
    fail("command", "unknown command '" + c.command + "'");
  if (catalog_parameters().count(c.problem) == 0) fail("problem", "unknown catalog problem '" + c.problem + "'");
  try {
    CatalogParams cp{c.params, c.xi_mode};
    (void)catalog(c.problem, cp);
  } catch (const std::domain_error& e) {
    fail("problem", e.what());
  }
  if (!(c.T > c.t0)) fail("grid", "grid: T must exceed t0");
  if (c.n_steps.empty()) fail("grid", "grid.n_steps: empty list");
  for (auto n : c.n_steps)
    if (n < 2) fail("grid", "grid.n_steps: values must be at least 2");
  if (c.p.empty()) fail("p", "p: empty list");
  for (double p : c.p)
    if (!(p > 1.0 && p <= 2.0)) fail("p", "p: value " + csv::num(p) + " outside (1, 2]");
  if (c.paths < 1) fail("paths", "paths must be positive");
  if (c.group_size < 1 || c.paths % c.group_size != 0) fail("solver", "solver.group_size must divide paths");
  if (c.basis_degree < 0 || c.basis_degree > 6) fail("solver", "solver.basis_degree must lie in [0, 6]");
  if (!(c.tol > 0.0)) fail("solver", "solver.tol must be positive");
  if (c.max_iter < 1) fail("solver", "solver.max_iter must be positive");
  if (c.scales.empty()) fail("scales", "scales: empty list");
  for (double s : c.scales)
    if (!(s > 0.0)) fail("scales", "scales: values must be positive");
  if (c.ladder_n.empty() || c.ladder_i.empty()) fail("ladder", "ladder: empty list");
  for (double n : c.ladder_n)
    if (n < 1.0) fail("ladder", "ladder.n: levels must be at least 1");
  if (c.eps_exponents.empty()) fail("tanaka", "tanaka.eps_exponents: empty list");
  if (c.fk_terminal != "identity" && c.fk_terminal != "square" && c.fk_terminal != "const")
    fail("feynman_kac", "feynman_kac.terminal must be identity, square or const");
}

inline RunConfig parse_config(const std::string& text, const std::string& source = "config") {
  detail::Reader rd(source);
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source, e.mark.line + 1, e.msg);
  }
  RunConfig c;
  if (root.IsNull()) return c;
  rd.only_keys(root,
               {"experiment", "command", "problem", "grid", "paths", "seed", "p", "solver", "scales", "ladder",
                "tanaka", "feynman_kac", "export_paths", "probes", "output"},
               "config");
  std::map<std::string, int> lines;
  for (const auto& kv : root) lines[kv.first.as<std::string>()] = detail::line_of(kv.first);

  if (auto n = root["experiment"]) c.experiment = rd.scalar<std::string>(n, "experiment");
  if (auto n = root["command"]) c.command = rd.scalar<std::string>(n, "command");
  if (auto n = root["problem"]) {
    if (n.IsScalar()) {
      c.problem = rd.scalar<std::string>(n, "problem");
    } else {
      rd.only_keys(n, {"name", "params", "xi_mode"}, "problem");
      if (auto m = n["name"]) c.problem = rd.scalar<std::string>(m, "problem.name");
      if (auto m = n["xi_mode"]) c.xi_mode = rd.scalar<std::string>(m, "problem.xi_mode");
      if (auto m = n["params"]) {
        if (!m.IsMap()) rd.fail(m, "problem.params: expected a mapping");
        for (const auto& kv : m) c.params[kv.first.as<std::string>()] = rd.scalar<double>(kv.second, "problem.params");
      }
    }
  }
  if (auto n = root["grid"]) {
    rd.only_keys(n, {"t0", "T", "n_steps"}, "grid");
    if (auto m = n["t0"]) c.t0 = rd.scalar<double>(m, "grid.t0");
    if (auto m = n["T"]) c.T = rd.scalar<double>(m, "grid.T");
    if (auto m = n["n_steps"]) c.n_steps = rd.list<std::size_t>(m, "grid.n_steps");
  }
  if (auto n = root["paths"]) c.paths = rd.scalar<std::size_t>(n, "paths");
  if (auto n = root["seed"]) c.seed = rd.scalar<std::uint64_t>(n, "seed");
  if (auto n = root["p"]) c.p = rd.list<double>(n, "p");
  if (auto n = root["solver"]) {
    rd.only_keys(n, {"basis_degree", "group_size", "tol", "max_iter", "gamma"}, "solver");
    if (auto m = n["basis_degree"]) c.basis_degree = rd.scalar<int>(m, "solver.basis_degree");
    if (auto m = n["group_size"]) c.group_size = rd.scalar<std::size_t>(m, "solver.group_size");
    if (auto m = n["tol"]) c.tol = rd.scalar<double>(m, "solver.tol");
    if (auto m = n["max_iter"]) c.max_iter = rd.scalar<std::size_t>(m, "solver.max_iter");
    if (auto m = n["gamma"]) {
      if (rd.scalar<std::string>(m, "solver.gamma") != "default") c.gamma = rd.scalar<double>(m, "solver.gamma");
    }
  }
  if (auto n = root["scales"]) c.scales = rd.list<double>(n, "scales");
  if (auto n = root["ladder"]) {
    rd.only_keys(n, {"n", "i"}, "ladder");
    if (auto m = n["n"]) c.ladder_n = rd.list<double>(m, "ladder.n");
    if (auto m = n["i"]) c.ladder_i = rd.list<double>(m, "ladder.i");
  }
  if (auto n = root["tanaka"]) {
    rd.only_keys(n, {"eps_exponents", "x0"}, "tanaka");
    if (auto m = n["eps_exponents"]) c.eps_exponents = rd.list<int>(m, "tanaka.eps_exponents");
    if (auto m = n["x0"]) c.tanaka_x0 = rd.scalar<double>(m, "tanaka.x0");
  }
  if (auto n = root["feynman_kac"]) {
    rd.only_keys(n, {"x", "sigma", "c", "terminal"}, "feynman_kac");
    if (auto m = n["x"]) c.fk_x = rd.scalar<double>(m, "feynman_kac.x");
    if (auto m = n["sigma"]) c.fk_sigma = rd.scalar<double>(m, "feynman_kac.sigma");
    if (auto m = n["c"]) c.fk_c = rd.scalar<double>(m, "feynman_kac.c");
    if (auto m = n["terminal"]) c.fk_terminal = rd.scalar<std::string>(m, "feynman_kac.terminal");
  }
  if (auto n = root["export_paths"]) c.export_paths = rd.scalar<std::size_t>(n, "export_paths");
  if (auto n = root["probes"]) c.probes = rd.scalar<std::size_t>(n, "probes");
  if (auto n = root["output"]) c.output = rd.scalar<std::string>(n, "output");
  validate(c, source, lines);
  return c;
}

inline RunConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string(), 0, "cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

/// Canonical YAML for a config: fixed key order, shortest round-trip numbers.
inline std::string emit_config(const RunConfig& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  auto numlist = [&](const auto& v) {
    e << YAML::Flow << YAML::BeginSeq;
    for (const auto& x : v) e << x;
    e << YAML::EndSeq;
  };
  e << YAML::BeginMap;
  e << YAML::Key << "experiment" << YAML::Value << c.experiment;
  e << YAML::Key << "command" << YAML::Value << c.command;
  e << YAML::Key << "problem" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "name" << YAML::Value << c.problem;
  e << YAML::Key << "xi_mode" << YAML::Value << c.xi_mode;
  e << YAML::Key << "params" << YAML::Value << YAML::Flow << YAML::BeginMap;
  for (const auto& [k, v] : c.params) e << YAML::Key << k << YAML::Value << v;
  e << YAML::EndMap << YAML::EndMap;
  e << YAML::Key << "grid" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "t0" << YAML::Value << c.t0 << YAML::Key << "T" << YAML::Value << c.T;
  e << YAML::Key << "n_steps" << YAML::Value;
  numlist(c.n_steps);
  e << YAML::EndMap;
  e << YAML::Key << "paths" << YAML::Value << c.paths;
  e << YAML::Key << "seed" << YAML::Value << c.seed;
  e << YAML::Key << "p" << YAML::Value;
  numlist(c.p);
  e << YAML::Key << "solver" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "basis_degree" << YAML::Value << c.basis_degree;
  e << YAML::Key << "group_size" << YAML::Value << c.group_size;
  e << YAML::Key << "tol" << YAML::Value << c.tol;
  e << YAML::Key << "max_iter" << YAML::Value << c.max_iter;
  e << YAML::Key << "gamma" << YAML::Value;
  if (c.gamma)
    e << *c.gamma;
  else
    e << "default";
  e << YAML::EndMap;
  e << YAML::Key << "scales" << YAML::Value;
  numlist(c.scales);
  e << YAML::Key << "ladder" << YAML::Value << YAML::BeginMap << YAML::Key << "n" << YAML::Value;
  numlist(c.ladder_n);
  e << YAML::Key << "i" << YAML::Value;
  numlist(c.ladder_i);
  e << YAML::EndMap;
  e << YAML::Key << "tanaka" << YAML::Value << YAML::BeginMap << YAML::Key << "eps_exponents" << YAML::Value;
  numlist(c.eps_exponents);
  e << YAML::Key << "x0" << YAML::Value << c.tanaka_x0 << YAML::EndMap;
  e << YAML::Key << "feynman_kac" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "x" << YAML::Value << c.fk_x << YAML::Key << "sigma" << YAML::Value << c.fk_sigma;
  e << YAML::Key << "c" << YAML::Value << c.fk_c << YAML::Key << "terminal" << YAML::Value << c.fk_terminal;
  e << YAML::EndMap;
  e << YAML::Key << "export_paths" << YAML::Value << c.export_paths;
  e << YAML::Key << "probes" << YAML::Value << c.probes;
  e << YAML::Key << "output" << YAML::Value << c.output;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Sweep execution
// ---------------------------------------------------------------------------

struct Cell {
  std::size_t index = 0;
  std::size_t n_steps = 0;
  double p = 2.0;
  double scale = 1.0;
  double eps = 0.0;
  std::uint64_t seed = 0;
};

struct CellResult {
  std::string status = "ok";
  std::string message;
  std::vector<std::pair<std::string, std::string>> metrics;
  std::map<std::string, std::string> files;  // name -> contents
};

inline std::vector<Cell> build_cells(const RunConfig& c) {
  std::vector<Cell> cells;
  auto push = [&](std::size_t n, double p, double s, double eps) {
    cells.push_back({cells.size(), n, p, s, eps, derive_seed(c.seed, cells.size())});
  };
  for (auto n : c.n_steps) {
    if (c.command == "verify-tanaka") {
      for (double p : c.p) {
        if (p == 2.0) {
          push(n, p, 1.0, 0.0);
          continue;
        }
        for (int k : c.eps_exponents) push(n, p, 1.0, std::ldexp(1.0, -k));
      }
    } else if (c.command == "a-priori") {
      for (double p : c.p)
        for (double s : c.scales) push(n, p, s, 0.0);
    } else if (c.command == "ladder") {
      for (double p : c.p) push(n, p, 1.0, 0.0);
    } else {
      push(n, c.p.front(), 1.0, 0.0);
    }
  }
  return cells;
}

namespace detail {

inline std::string fmt(double v) { return csv::num(v); }
inline std::string fmt(std::size_t v) { return std::to_string(v); }

inline GeneratorSpec spec_for(const RunConfig& c) { return catalog(c.problem, CatalogParams{c.params, c.xi_mode}); }

inline double gamma_for(const RunConfig& c, const GeneratorSpec& s) {
  return c.gamma ? *c.gamma : default_gamma(s.lambda, s.alpha);
}

inline PathBundle bundle_for(const RunConfig& c, const Cell& cell, int d, int ell) {
  return sample_bundle(make_grid(c.t0, c.T, cell.n_steps), d, ell, c.paths, cell.seed, c.group_size);
}

inline std::string to_csv(const auto& writer_fn) {
  std::ostringstream os;
  writer_fn(os);
  return os.str();
}

inline std::string tag(const Cell& cell) { return "cell" + std::to_string(cell.index); }

inline void run_cell(const RunConfig& c, const Cell& cell, CellResult& out) {
  auto metric = [&](const std::string& k, auto v) { out.metrics.emplace_back(k, fmt(v)); };
  const auto& cmd = c.command;

  if (cmd == "simulate-paths") {
    const auto spec = spec_for(c);
    const auto b = bundle_for(c, cell, spec.d, spec.ell);
    const std::size_t n = cell.n_steps;
    std::vector<double> w2(b.n_paths), b2(b.n_paths), cross(b.n_paths);
    for (std::size_t k = 0; k < b.n_paths; ++k) {
      w2[k] = b.W.at(k, n, 0) * b.W.at(k, n, 0);
      b2[k] = b.B.at(k, n, 0) * b.B.at(k, n, 0);
      cross[k] = b.W.at(k, n, 0) * b.B.at(k, n, 0);
    }
    metric("var_W_T", tree_mean(w2));
    metric("var_B_T", tree_mean(b2));
    metric("cov_W_B", tree_mean(cross));
    out.files["paths_" + tag(cell) + ".csv"] = to_csv([&](auto& os) { write_bundle_csv(os, b, c.export_paths); });
    return;
  }

  if (cmd == "verify-tanaka") {
    const auto b = sample_bundle(make_grid(c.t0, c.T, cell.n_steps), 1, 1, c.paths, cell.seed);
    const std::size_t N = b.grid.nodes();
    Semimartingale sm{Vec::Constant(1, c.tanaka_x0), PathTensor(c.paths, N, 1), PathTensor(c.paths, N, 1, 1),
                      PathTensor(c.paths, N, 1, 1, 1.0), &b};
    const auto rep = tanaka_residual(sm, cell.p, cell.eps, cell.n_steps);
    metric("residual_sup", rep.residual_sup);
    metric("residual_rms", rep.residual_rms);
    metric("correction_mean_abs", rep.correction_mean_abs);
    return;
  }

  if (cmd == "solve-linear") {
    if (c.problem != "linear_pricing") throw std::domain_error("solve-linear needs problem linear_pricing");
    const auto spec = spec_for(c);
    const double r = c.params.count("r") ? c.params.at("r") : 0.05;
    const double cc = c.params.count("c") ? c.params.at("c") : 0.3;
    const double xi = c.params.count("xi") ? c.params.at("xi") : 1.0;
    const double theta = c.params.count("theta") ? c.params.at("theta") : 0.0;
    if (theta != 0.0 || c.xi_mode != "const") throw std::domain_error("solve-linear needs theta = 0 and constant xi");
    const auto b = bundle_for(c, cell, spec.d, spec.ell);
    const auto exact = solve_linear_exact(r, cc, Vec::Constant(spec.d, xi), b);
    const auto disc = solve_discrete(spec, b, b.W, BasisSpec{c.basis_degree});
    double se = 0.0, mx = 0.0;
    std::vector<double> sq(b.n_paths), y0(b.n_paths);
    for (std::size_t k = 0; k < b.n_paths; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i <= cell.n_steps; ++i) {
        const double e = (exact.Y.vec(k, i) - disc.Y.vec(k, i)).norm();
        s += e * e;
        mx = std::max(mx, e);
      }
      sq[k] = s / static_cast<double>(cell.n_steps + 1);
      y0[k] = exact.Y.at(k, 0, 0);
    }
    se = std::sqrt(tree_mean(sq));
    metric("y0_exact_mean", tree_mean(y0));
    metric("rms_error", se);
    metric("max_error", mx);
    out.files["solution_" + tag(cell) + ".csv"] = to_csv([&](auto& os) { write_solution_csv(os, disc, c.export_paths); });
    out.files["exact_" + tag(cell) + ".csv"] = to_csv([&](auto& os) { write_solution_csv(os, exact, c.export_paths); });
    return;
  }

  if (cmd == "solve") {
    const auto spec = spec_for(c);
    const auto b = bundle_for(c, cell, spec.d, spec.ell);
    const auto rep = check_structure(spec, c.probes, cell.seed, c.t0, c.T);
    const auto sol = solve_discrete(spec, b, b.W, BasisSpec{c.basis_degree});
    std::vector<double> y0(b.n_groups());
    for (std::size_t g = 0; g < y0.size(); ++g) y0[g] = sol.Y.at(g * b.b_group_size, 0, 0);
    const auto e = batch_mean(y0);
    metric("y0_mean", e.value);
    metric("y0_stderr", e.stderr_);
    metric("structure_pass", rep.all_pass() ? 1.0 : 0.0);
    metric("degraded_nodes", sol.meta.degraded_nodes);
    metric("max_inner_iterations", static_cast<double>(sol.meta.max_inner_iterations));
    out.files["solution_" + tag(cell) + ".csv"] = to_csv([&](auto& os) { write_solution_csv(os, sol, c.export_paths); });
    out.files["assumptions_" + tag(cell) + ".csv"] = to_csv([&](auto& os) { write_assumption_csv(os, rep); });
    return;
  }

  if (cmd == "picard-trace") {
    const auto spec = spec_for(c);
    const auto b = bundle_for(c, cell, spec.d, spec.ell);
    const double gamma = gamma_for(c, spec);
    const auto [sol, tr] = picard_solve(spec, b, b.W, BasisSpec{c.basis_degree}, gamma, c.tol, c.max_iter);
    double mean_ratio = 0.0, max_ratio = 0.0;
    for (double r : tr.ratios) {
      mean_ratio += r / static_cast<double>(tr.ratios.size());
      max_ratio = std::max(max_ratio, r);
    }
    metric("gamma", gamma);
    metric("iterations", tr.iterations);
    metric("converged", tr.converged ? 1.0 : 0.0);
    metric("final_increment", tr.norms.empty() ? 0.0 : tr.norms.back());
    metric("mean_ratio", mean_ratio);
    metric("max_ratio", max_ratio);
    metric("contraction_ratio", contraction_ratio(spec, b, b.W, BasisSpec{c.basis_degree}, gamma, cell.seed));
    out.files["picard_" + tag(cell) + ".csv"] = to_csv([&](auto& os) { write_picard_csv(os, tr); });
    if (!tr.converged) {
      out.status = "not_converged";
      out.message = "max_iter reached";
    }
    return;
  }

  if (cmd == "a-priori") {
    const auto spec = scale_data(spec_for(c), cell.scale);
    const auto b = bundle_for(c, cell, spec.d, spec.ell);
    const auto sol = solve_discrete(spec, b, b.W, BasisSpec{c.basis_degree});
    const auto r31 = z_energy_ratio(spec, sol, cell.p);
    const auto r32 = data_bound_ratio(spec, sol, cell.p);
    metric("z_energy", r31.value);
    metric("z_energy_stderr", r31.stderr_);
    out.metrics.emplace_back("z_energy_status", to_string(r31.status));
    metric("data_bound", r32.value);
    metric("data_bound_stderr", r32.stderr_);
    out.metrics.emplace_back("data_bound_status", to_string(r32.status));
    const auto nr = norm_report(spec, sol, cell.p);
    out.files["norms_" + tag(cell) + ".csv"] = to_csv([&](auto& os) { write_norm_report(os, nr, cell.seed); });
    if (r31.status == RatioStatus::violation || r32.status == RatioStatus::violation) out.status = "violation";
    return;
  }

  if (cmd == "ladder") {
    const auto spec = spec_for(c);
    const auto b = bundle_for(c, cell, spec.d, spec.ell);
    const auto t = ladder_cauchy(spec, c.ladder_n, c.ladder_i, cell.p, b, b.W, BasisSpec{c.basis_degree});
    std::vector<double> lhs, rhs;
    bool failed = false;
    for (const auto& cc : t.cells) {
      lhs.push_back(cc.lhs.value);
      rhs.push_back(cc.rhs.value);
      failed |= cc.status != "ok";
    }
    metric("spearman", lhs.size() >= 2 ? spearman(lhs, rhs) : std::nan(""));
    out.files["cauchy_" + tag(cell) + ".csv"] = to_csv([&](auto& os) { write_cauchy_table(os, t); });
    if (failed) {
      out.status = "partial";
      out.message = "solver failure on some rungs";
    }
    return;
  }

  if (cmd == "feynman-kac") {
    const auto b = sample_bundle(make_grid(c.t0, c.T, cell.n_steps), 1, 1, c.paths, cell.seed, c.group_size);
    const double sigma = c.fk_sigma, cc = c.fk_c;
    MarkovSpec ms;
    ms.b = [](const Vec& x) { return Vec(Vec::Zero(x.size())); };
    ms.sigma = [sigma](const Vec&) { return Mat(Mat::Constant(1, 1, sigma)); };
    if (c.fk_terminal == "identity") ms.l = [](const Vec& x) { return x; };
    if (c.fk_terminal == "square") ms.l = [](const Vec& x) { return Vec(x.array().square().matrix()); };
    if (c.fk_terminal == "const") ms.l = [](const Vec& x) { return Vec(Vec::Ones(x.size())); };
    if (cc != 0.0) ms.g = [cc](double, const Vec&, const Vec& y, const Mat&) { return Mat(cc * y); };
    const auto u = feynman_kac(ms, c.t0, Vec::Constant(1, c.fk_x), b, BasisSpec{c.basis_degree});
    metric("u_mean", u.mean);
    metric("u_stderr", u.stderr_);
    metric("groups", u.per_group.size());
    return;
  }
  throw std::domain_error("unknown command '" + cmd + "'");
}

}  // namespace detail

struct RunResult {
  int exit_code = kExitOk;
  fs::path manifest;
  std::vector<std::string> files;  // relative to the output directory
  std::size_t failed_cells = 0;
  std::vector<Cell> cells;
  std::vector<CellResult> results;
};

/// Writes all artifacts of `c` below `c.output` and a manifest.yaml listing
/// them with their hashes.
inline RunResult run(const RunConfig& c, std::ostream& log) {
  validate(c);
  if (c.command.empty()) throw ConfigError("config", 0, "no command given");
  const fs::path dir = c.output;
  fs::create_directories(dir);

  RunResult res;
  res.cells = build_cells(c);
  res.results.resize(res.cells.size());
  parallel_for(res.cells.size(), [&](std::size_t j) {
    try {
      detail::run_cell(c, res.cells[j], res.results[j]);
    } catch (const std::exception& e) {
      res.results[j].status = "error";
      res.results[j].message = e.what();
    }
  });

  // summary: fixed leading columns, then the union of metric names in first-seen order
  std::vector<std::string> metric_names;
  for (const auto& r : res.results)
    for (const auto& [k, _] : r.metrics)
      if (std::find(metric_names.begin(), metric_names.end(), k) == metric_names.end()) metric_names.push_back(k);
  std::vector<std::string> header{"cell", "command", "n_steps", "p", "scale", "eps", "seed", "status", "message"};
  header.insert(header.end(), metric_names.begin(), metric_names.end());

  std::map<std::string, std::string> outputs;
  {
    std::ostringstream os;
    csv::Writer w(os, header);
    for (std::size_t j = 0; j < res.cells.size(); ++j) {
      const auto& cell = res.cells[j];
      const auto& r = res.results[j];
      w.cell(cell.index).cell(c.command).cell(cell.n_steps).cell(cell.p).cell(cell.scale).cell(cell.eps)
          .cell(std::to_string(cell.seed)).cell(r.status).cell(r.message);
      for (const auto& name : metric_names) {
        auto it = std::find_if(r.metrics.begin(), r.metrics.end(), [&](const auto& m) { return m.first == name; });
        w.cell(it == r.metrics.end() ? std::string() : it->second);
      }
      w.end_row();
      if (r.status != "ok") {
        ++res.failed_cells;
        log << "cell " << cell.index << ": " << r.status << (r.message.empty() ? "" : " (" + r.message + ")") << "\n";
      }
      for (const auto& [name, body] : r.files) outputs[name] = body;
    }
    outputs["summary.csv"] = os.str();
  }

  const std::string config_text = emit_config(c);
  YAML::Emitter m;
  m << YAML::BeginMap;
  m << YAML::Key << "version" << YAML::Value << BDSDE_VERSION;
  m << YAML::Key << "experiment" << YAML::Value << c.experiment;
  m << YAML::Key << "command" << YAML::Value << c.command;
  m << YAML::Key << "seed" << YAML::Value << c.seed;
  m << YAML::Key << "config_hash" << YAML::Value << hex64(fnv1a(config_text));
  m << YAML::Key << "config" << YAML::Value << YAML::Literal << config_text;
  m << YAML::Key << "files" << YAML::Value << YAML::BeginSeq;
  for (const auto& [name, body] : outputs) {
    std::ofstream f(dir / name, std::ios::binary);
    f << body;
    if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
    res.files.push_back(name);
    m << YAML::BeginMap << YAML::Key << "path" << YAML::Value << name << YAML::Key << "fnv1a" << YAML::Value
      << hex64(fnv1a(body)) << YAML::Key << "bytes" << YAML::Value << body.size() << YAML::EndMap;
  }
  m << YAML::EndSeq << YAML::EndMap;
  res.manifest = dir / "manifest.yaml";
  {
    std::ofstream f(res.manifest, std::ios::binary);
    f << m.c_str() << "\n";
  }
  res.exit_code = res.failed_cells ? kExitCellFailure : kExitOk;
  log << c.command << ": " << res.cells.size() << " cells, " << res.failed_cells << " failed, output " << dir.string()
      << "\n";
  return res;
}

struct ReplayResult {
  bool identical = true;
  std::vector<std::string> mismatched;
  RunResult run;
};

/// Reruns the config stored in a manifest into `out_dir` and compares every
/// listed file hash.
inline ReplayResult replay(const fs::path& manifest_path, const fs::path& out_dir, std::ostream& log) {
  const YAML::Node m = YAML::LoadFile(manifest_path.string());
  if (!m["config"] || !m["files"]) throw ConfigError(manifest_path.string(), 0, "not a run manifest");
  RunConfig c = parse_config(m["config"].as<std::string>(), manifest_path.string() + "#config");
  if (fs::weakly_canonical(out_dir) == fs::weakly_canonical(fs::path(c.output)) ||
      fs::weakly_canonical(out_dir) == fs::weakly_canonical(manifest_path.parent_path()))
    throw ConfigError(manifest_path.string(), 0, "replay output must differ from the recorded output directory");
  c.output = out_dir.string();
  ReplayResult rr;
  rr.run = run(c, log);
  for (const auto& f : m["files"]) {
    const auto name = f["path"].as<std::string>();
    const auto want = f["fnv1a"].as<std::string>();
    std::string got;
    try {
      got = hex64(fnv1a(read_file(out_dir / name)));
    } catch (const std::exception&) {
      got = "missing";
    }
    if (got != want) {
      rr.identical = false;
      rr.mismatched.push_back(name);
    }
  }
  log << "replay: " << (rr.identical ? "all hashes match" : std::to_string(rr.mismatched.size()) + " files differ")
      << "\n";
  return rr;
}

}  // namespace bdsde::cli
