#pragma once

// Monte Carlo norms (S^p, M^p), a priori ratio surrogates, localization
// times, the uniqueness gap and the truncation-ladder Cauchy table.

#include "bdsde/csv.hpp"
#include "bdsde/grid_paths.hpp"
#include "bdsde/parallel.hpp"
#include "bdsde/problem_model.hpp"
#include "bdsde/solver.hpp"
#include "bdsde/stochastic_calculus.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace bdsde {

struct Estimate {
  double value = 0.0;
  double stderr_ = 0.0;
};

inline constexpr std::size_t kBatches = 32;

/// Mean of per-path samples with a batch-means standard error. Contiguous
/// batches keep paths of one B group together.
inline Estimate batch_mean(std::span<const double> xs, std::size_t batches = kBatches) {
  require(!xs.empty(), "estimate: empty batch");
  const double mean = tree_mean(xs);
  const std::size_t nb = std::min(batches, xs.size());
  if (nb < 2) return {mean, 0.0};
  std::vector<double> bm(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t lo = b * xs.size() / nb, hi = (b + 1) * xs.size() / nb;
    bm[b] = tree_mean(xs.subspan(lo, hi - lo));
  }
  std::vector<double> sq(nb);
  for (std::size_t b = 0; b < nb; ++b) sq[b] = (bm[b] - mean) * (bm[b] - mean);
  return {mean, std::sqrt(tree_sum(sq) / static_cast<double>(nb - 1) / static_cast<double>(nb))};
}

namespace detail {

/// m -> m^{1 v 1/p} with the delta-method standard error.
inline Estimate power_root(const Estimate& m, double p) {
  const double e = std::min(1.0, 1.0 / p);
  if (m.value <= 0.0) return {0.0, e == 1.0 ? m.stderr_ : 0.0};
  return {std::pow(m.value, e), e * std::pow(m.value, e - 1.0) * m.stderr_};
}

/// Left-Riemann integral of |X_i|^2 over all steps, per path.
inline std::vector<double> quadratic_budget(const PathTensor& X, const TimeGrid& grid) {
  std::vector<double> out(X.paths());
  parallel_for(X.paths(), [&](std::size_t k) {
    CompensatedSum s;
    for (std::size_t i = 0; i < grid.n_steps; ++i) s.add(X.mat(k, i).squaredNorm() * grid.dt());
    out[k] = s.value();
  });
  return out;
}

inline std::vector<double> sup_power(const PathTensor& Y, double p) {
  std::vector<double> out(Y.paths());
  parallel_for(Y.paths(), [&](std::size_t k) {
    double m = 0.0;
    for (std::size_t i = 0; i < Y.nodes(); ++i) m = std::max(m, Y.vec(k, i).norm());
    out[k] = std::pow(m, p);
  });
  return out;
}

}  // namespace detail

/// E[sup_t |Y_t|^p]^{1 v 1/p}.
inline Estimate sp_norm(const PathTensor& Y, double p) {
  require(p > 0.0, "sp_norm: p must be positive");
  require(Y.paths() > 0, "sp_norm: empty batch");
  const auto s = detail::sup_power(Y, p);
  return detail::power_root(batch_mean(s), p);
}

/// E[(int |Z|^2 dt)^{p/2}]^{1 v 1/p}.
inline Estimate mp_norm(const PathTensor& Z, const TimeGrid& grid, double p) {
  require(p > 0.0, "mp_norm: p must be positive");
  require(Z.paths() > 0, "mp_norm: empty batch");
  auto q = detail::quadratic_budget(Z, grid);
  for (double& v : q) v = std::pow(v, 0.5 * p);
  return detail::power_root(batch_mean(q), p);
}

// ---------------------------------------------------------------------------
// Data norms and a priori ratios
// ---------------------------------------------------------------------------

/// Per-path data integrals along a solution.
struct DataIntegrals {
  std::vector<double> f0_l1;       // int |f0|
  std::vector<double> g0_l2;       // int |g0|^2
  std::vector<double> y_weighted;  // int |Y|^{p-2} 1{Y != 0} |g0|^2
  std::vector<double> xi_p;        // |Y_T|^p
};

inline DataIntegrals data_integrals(const GeneratorSpec& spec, const SolutionPath& sol, double p) {
  const auto& grid = sol.grid;
  const std::size_t P = sol.paths(), n = grid.n_steps;
  const double dt = grid.dt();
  // f0 and g0 are deterministic in every catalog entry but are evaluated per node
  std::vector<double> f0(n), g0(n);
  for (std::size_t i = 0; i < n; ++i) {
    f0[i] = f_zero(spec, grid.time(i)).norm();
    g0[i] = g_zero(spec, grid.time(i)).squaredNorm();
  }
  DataIntegrals out{std::vector<double>(P), std::vector<double>(P), std::vector<double>(P), std::vector<double>(P)};
  parallel_for(P, [&](std::size_t k) {
    CompensatedSum a, b, c;
    const double tau = zero_threshold(sol.Y.vec(k, n).norm());
    for (std::size_t i = 0; i < n; ++i) {
      a.add(f0[i] * dt);
      b.add(g0[i] * dt);
      c.add(detail::power_weight(sol.Y.vec(k, i).norm(), p, tau) * g0[i] * dt);
    }
    out.f0_l1[k] = a.value();
    out.g0_l2[k] = b.value();
    out.y_weighted[k] = c.value();
    out.xi_p[k] = std::pow(sol.Y.vec(k, n).norm(), p);
  });
  return out;
}

struct NormReport {
  double p = 2.0;
  Estimate sp, mp;
  Estimate f0_term;   // E (int |f0|)^p
  Estimate g0_term;   // E (int |g0|^2)^{p/2}
  Estimate yg0_term;  // E int |Y|^{p-2} 1{Y != 0} |g0|^2
  std::size_t n_paths = 0, n_steps = 0;
};

inline NormReport norm_report(const GeneratorSpec& spec, const SolutionPath& sol, double p) {
  const auto di = data_integrals(spec, sol, p);
  const std::size_t P = sol.paths();
  std::vector<double> a(P), b(P);
  for (std::size_t k = 0; k < P; ++k) {
    a[k] = std::pow(di.f0_l1[k], p);
    b[k] = std::pow(di.g0_l2[k], 0.5 * p);
  }
  return {p, sp_norm(sol.Y, p), mp_norm(sol.Z, sol.grid, p), batch_mean(a), batch_mean(b), batch_mean(di.y_weighted),
          P, sol.grid.n_steps};
}

enum class RatioStatus { ok, null_data, violation };

inline const char* to_string(RatioStatus s) {
  switch (s) {
    case RatioStatus::ok: return "ok";
    case RatioStatus::null_data: return "null_data";
    case RatioStatus::violation: return "violation";
  }
  return "?";
}

/// numerator / denominator of two expectations. 0/0 is reported as the
/// null-data sentinel (value NaN), x/0 with x > 0 as a violation.
struct RatioEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
  double numerator = 0.0;
  double denominator = 0.0;
  RatioStatus status = RatioStatus::ok;
};

inline RatioEstimate ratio_of_means(std::span<const double> num, std::span<const double> den,
                                    std::size_t batches = kBatches) {
  require(num.size() == den.size() && !num.empty(), "ratio: sample size mismatch");
  RatioEstimate r;
  r.numerator = tree_mean(num);
  r.denominator = tree_mean(den);
  const double floor = 1e-300;
  if (std::abs(r.denominator) <= floor) {
    r.status = std::abs(r.numerator) <= floor ? RatioStatus::null_data : RatioStatus::violation;
    r.value = r.status == RatioStatus::null_data ? std::nan("") : INFINITY;
    return r;
  }
  r.value = r.numerator / r.denominator;
  // linearized residuals n_k - R d_k, batch means
  std::vector<double> lin(num.size());
  for (std::size_t k = 0; k < num.size(); ++k) lin[k] = (num[k] - r.value * den[k]) / r.denominator;
  r.stderr_ = batch_mean(lin, batches).stderr_;
  return r;
}

/// E[(int|Z|^2)^{p/2}] / E[sup|Y|^p + (int|f0|)^p + (int|g0|^2)^{p/2}].
inline RatioEstimate z_energy_ratio(const GeneratorSpec& spec, const SolutionPath& sol, double p) {
  require(p > 1.0 && p <= 2.0, "z_energy_ratio: p must lie in (1, 2]");
  const auto di = data_integrals(spec, sol, p);
  const auto sup = detail::sup_power(sol.Y, p);
  auto q = detail::quadratic_budget(sol.Z, sol.grid);
  const std::size_t P = sol.paths();
  std::vector<double> num(P), den(P);
  for (std::size_t k = 0; k < P; ++k) {
    num[k] = std::pow(q[k], 0.5 * p);
    den[k] = sup[k] + std::pow(di.f0_l1[k], p) + std::pow(di.g0_l2[k], 0.5 * p);
  }
  return ratio_of_means(num, den);
}

/// E[sup|Y|^p + (int|Z|^2)^{p/2}] /
/// E[|xi|^p + (int|f0|)^p + (int|g0|^2)^{p/2} + int |Y|^{p-2} 1{Y != 0} |g0|^2].
/// The last term uses the solved Y, so the right side depends on the solution.
inline RatioEstimate data_bound_ratio(const GeneratorSpec& spec, const SolutionPath& sol, double p) {
  require(p > 1.0 && p <= 2.0, "data_bound_ratio: p must lie in (1, 2]");
  const auto di = data_integrals(spec, sol, p);
  const auto sup = detail::sup_power(sol.Y, p);
  auto q = detail::quadratic_budget(sol.Z, sol.grid);
  const std::size_t P = sol.paths();
  std::vector<double> num(P), den(P);
  for (std::size_t k = 0; k < P; ++k) {
    num[k] = sup[k] + std::pow(q[k], 0.5 * p);
    den[k] = di.xi_p[k] + std::pow(di.f0_l1[k], p) + std::pow(di.g0_l2[k], 0.5 * p) + di.y_weighted[k];
  }
  return ratio_of_means(num, den);
}

/// max/min over a family of ratios; identical values (including all zero)
/// give 1, a zero next to a positive value gives infinity.
inline double ratio_spread(const std::vector<double>& values) {
  require(!values.empty(), "ratio_spread: empty family");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*hi == *lo) return 1.0;
  if (*lo <= 0.0) return INFINITY;
  return *hi / *lo;
}

// ---------------------------------------------------------------------------
// Localization
// ---------------------------------------------------------------------------

struct TauLocalization {
  std::vector<double> levels;
  std::vector<std::vector<std::size_t>> nodes;  // [level][path], n_steps means T
  std::size_t n_steps = 0;

  double fraction_before_T(std::size_t level_index) const {
    const auto& v = nodes.at(level_index);
    std::size_t c = 0;
    for (auto i : v) c += i < n_steps;
    return static_cast<double>(c) / static_cast<double>(v.size());
  }
};

/// tau_n = first node t_i with sum_{j<i} |Z_j|^2 dt >= n, capped at T.
inline TauLocalization tau_localization(const SolutionPath& sol, const std::vector<double>& levels) {
  const auto& grid = sol.grid;
  TauLocalization out{levels, {}, grid.n_steps};
  out.nodes.assign(levels.size(), std::vector<std::size_t>(sol.paths(), grid.n_steps));
  parallel_for(sol.paths(), [&](std::size_t k) {
    std::vector<double> cum(grid.nodes(), 0.0);
    CompensatedSum s;
    for (std::size_t i = 1; i < grid.nodes(); ++i) {
      s.add(sol.Z.mat(k, i - 1).squaredNorm() * grid.dt());
      cum[i] = s.value();
    }
    for (std::size_t l = 0; l < levels.size(); ++l) {
      for (std::size_t i = 0; i < grid.nodes(); ++i)
        if (cum[i] >= levels[l]) {
          out.nodes[l][k] = i;
          break;
        }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Uniqueness
// ---------------------------------------------------------------------------

struct UniquenessReport {
  double gap = 0.0;
  bool converged_a = false;
  bool converged_b = false;
  PicardTrace trace_a, trace_b;
};

inline UniquenessReport uniqueness_gap(const GeneratorSpec& spec, const PathBundle& bundle, const PathTensor& features,
                                       const BasisSpec& basis, double init_a, double init_b, double gamma,
                                       double tol = 1e-6, std::size_t max_iter = 100) {
  auto [sa, ta] = picard_solve(spec, bundle, features, basis, gamma, tol, max_iter,
                               constant_guess(bundle, spec.d, init_a, init_a));
  auto [sb, tb] = picard_solve(spec, bundle, features, basis, gamma, tol, max_iter,
                               constant_guess(bundle, spec.d, init_b, init_b));
  return {weighted_distance(sa, sb, gamma), ta.converged, tb.converged, std::move(ta), std::move(tb)};
}

// ---------------------------------------------------------------------------
// Truncation ladder
// ---------------------------------------------------------------------------

struct CauchyCell {
  double n = 0.0, i = 0.0;
  Estimate lhs, rhs;
  std::string status = "ok";
};

struct CauchyTable {
  std::vector<CauchyCell> cells;
  double p = 1.5;
  std::size_t n_paths = 0, n_steps = 0;
  std::uint64_t seed = 0;
};

/// Spearman rank correlation (average ranks for ties).
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && a.size() >= 2, "spearman: need two equal-length samples");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto x, auto y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    for (std::size_t s = 0; s < idx.size();) {
      std::size_t e = s;
      while (e + 1 < idx.size() && v[idx[e + 1]] == v[idx[s]]) ++e;
      for (std::size_t j = s; j <= e; ++j) r[idx[j]] = 0.5 * static_cast<double>(s + e) + 1.0;
      s = e + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n, mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t k = 0; k < ra.size(); ++k) {
    sab += (ra[k] - ma) * (rb[k] - mb);
    saa += (ra[k] - ma) * (ra[k] - ma);
    sbb += (rb[k] - mb) * (rb[k] - mb);
  }
  return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

/// For every (n, i): LHS = E[sup|Y^{n+i} - Y^n|^p + (int |Z^{n+i} - Z^n|^2)^{p/2}],
/// RHS = E[|xi_{n+i} - xi_n|^p + (int |q_{n+i}(f0) - q_n(f0)| dt)^p], where
/// level m solves the step-2 data (q_m(xi), f - f0 + q_m(f0)).
inline CauchyTable ladder_cauchy(const GeneratorSpec& spec, const std::vector<double>& n_list,
                                 const std::vector<double>& i_list, double p, const PathBundle& bundle,
                                 const PathTensor& features, const BasisSpec& basis = {}) {
  require(!n_list.empty() && !i_list.empty(), "ladder_cauchy: empty level list");
  require(p > 1.0 && p <= 2.0, "ladder_cauchy: p must lie in (1, 2]");
  const auto& grid = bundle.grid;
  const std::size_t P = bundle.n_paths, n_steps = grid.n_steps;
  const double dt = grid.dt();

  std::map<double, std::optional<SolutionPath>> solved;
  std::map<double, std::string> failures;
  auto level = [&](double m) -> const std::optional<SolutionPath>& {
    auto it = solved.find(m);
    if (it != solved.end()) return it->second;
    try {
      solved[m] = solve_discrete(truncated_data(spec, m), bundle, features, basis);
    } catch (const std::exception& e) {
      solved[m] = std::nullopt;
      failures[m] = e.what();
    }
    return solved[m];
  };

  const PathTensor xi = terminal_values(spec, bundle, features);
  std::vector<Vec> f0(n_steps);
  for (std::size_t j = 0; j < n_steps; ++j) f0[j] = f_zero(spec, grid.time(j));

  CauchyTable table{{}, p, P, n_steps, bundle.seed};
  for (double n : n_list)
    for (double i : i_list) {
      CauchyCell cell{n, i, {}, {}, "ok"};
      std::vector<double> rhs(P);
      CompensatedSum fsum;
      for (std::size_t j = 0; j < n_steps; ++j) fsum.add((q_n(f0[j], n + i) - q_n(f0[j], n)).norm() * dt);
      const double fterm = std::pow(fsum.value(), p);
      for (std::size_t k = 0; k < P; ++k) {
        const Vec x = xi.vec(k, 0);
        rhs[k] = std::pow((q_n(x, n + i) - q_n(x, n)).norm(), p) + fterm;
      }
      cell.rhs = batch_mean(rhs);

      const auto& a = level(n + i);
      const auto& b = level(n);
      if (!a || !b) {
        cell.status = "solver_failure: " + (a ? failures[n] : failures[n + i]);
        cell.lhs = {std::nan(""), std::nan("")};
        table.cells.push_back(std::move(cell));
        continue;
      }
      std::vector<double> lhs(P);
      parallel_for(P, [&](std::size_t k) {
        double sup = 0.0;
        CompensatedSum q;
        for (std::size_t j = 0; j < grid.nodes(); ++j) {
          sup = std::max(sup, (a->Y.vec(k, j) - b->Y.vec(k, j)).norm());
          if (j < n_steps) q.add((a->Z.mat(k, j) - b->Z.mat(k, j)).squaredNorm() * dt);
        }
        lhs[k] = std::pow(sup, p) + std::pow(q.value(), 0.5 * p);
      });
      cell.lhs = batch_mean(lhs);
      table.cells.push_back(std::move(cell));
    }
  return table;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Rows of (quantity, estimate, stderr, n_paths, n_steps, seed).
class EstimateWriter {
 public:
  EstimateWriter(std::ostream& os, std::size_t n_paths, std::size_t n_steps, std::uint64_t seed)
      : w_(os, {"quantity", "estimate", "stderr", "n_paths", "n_steps", "seed"}),
        n_paths_(n_paths), n_steps_(n_steps), seed_(seed) {}

  void row(const std::string& quantity, double value, double stderr_) {
    w_.cell(quantity).cell(value).cell(stderr_).cell(n_paths_).cell(n_steps_).cell(std::to_string(seed_));
    w_.end_row();
  }
  void row(const std::string& quantity, const Estimate& e) { row(quantity, e.value, e.stderr_); }

 private:
  csv::Writer w_;
  std::size_t n_paths_, n_steps_;
  std::uint64_t seed_;
};

inline void write_norm_report(std::ostream& os, const NormReport& r, std::uint64_t seed) {
  EstimateWriter w(os, r.n_paths, r.n_steps, seed);
  w.row("sp_norm", r.sp);
  w.row("mp_norm", r.mp);
  w.row("f0_term", r.f0_term);
  w.row("g0_term", r.g0_term);
  w.row("yg0_term", r.yg0_term);
}

inline void write_cauchy_table(std::ostream& os, const CauchyTable& t) {
  EstimateWriter w(os, t.n_paths, t.n_steps, t.seed);
  for (const auto& c : t.cells) {
    const std::string tag = "(n=" + csv::num(c.n) + ";i=" + csv::num(c.i) + ")";
    w.row("lhs" + tag, c.lhs);
    w.row("rhs" + tag, c.rhs);
  }
}

}  // namespace bdsde
