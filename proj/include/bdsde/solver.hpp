#pragma once

// Discrete BDSDE solvers: closed-form linear oracle, least-squares backward
// recursion within fixed-B groups, the Picard map and its iteration, and
// Feynman-Kac evaluation of the coupled forward-backward system.

#include "bdsde/csv.hpp"
#include "bdsde/grid_paths.hpp"
#include "bdsde/linalg.hpp"
#include "bdsde/parallel.hpp"
#include "bdsde/problem_model.hpp"
#include "bdsde/stochastic_calculus.hpp"

#include <Eigen/QR>

#include <cmath>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bdsde {

class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, std::size_t node) : std::runtime_error(what), node_(node) {}
  std::size_t node() const { return node_; }

 private:
  std::size_t node_;
};

struct BasisSpec {
  int degree = 3;  // total polynomial degree in the standardized features
};

struct SolveOptions {
  int max_inner = 50;
  double inner_tol = 1e-12;
};

struct SolverMeta {
  std::string scheme;
  int basis_degree = 0;
  std::size_t iterations = 0;
  std::size_t degraded_nodes = 0;  // (group, node) regressions that fell back to a lower degree
  int max_inner_iterations = 0;
};

struct SolutionPath {
  TimeGrid grid;
  PathTensor Y;  // [P][N+1][d]
  PathTensor Z;  // [P][N+1][d x d]
  SolverMeta meta;

  std::size_t paths() const { return Y.paths(); }
  int dim() const { return Y.rows(); }
};

/// Columnar export: path_id,node,t,Y1..Yd,Z11..Zdd (Z row-major).
inline void write_solution_csv(std::ostream& os, const SolutionPath& sol, std::size_t max_paths = SIZE_MAX) {
  std::vector<std::string> header{"path_id", "node", "t"};
  const int d = sol.Y.rows(), m = sol.Z.cols();
  for (int r = 0; r < d; ++r) header.push_back("Y" + std::to_string(r + 1));
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < m; ++c) header.push_back("Z" + std::to_string(r + 1) + std::to_string(c + 1));
  csv::Writer w(os, header);
  for (std::size_t k = 0; k < std::min(max_paths, sol.paths()); ++k)
    for (std::size_t i = 0; i < sol.grid.nodes(); ++i) {
      w.cell(k).cell(i).cell(sol.grid.time(i));
      for (int r = 0; r < d; ++r) w.cell(sol.Y.at(k, i, r));
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < m; ++c) w.cell(sol.Z.at(k, i, r, c));
      w.end_row();
    }
}

// ---------------------------------------------------------------------------
// Linear oracle
// ---------------------------------------------------------------------------

/// -dY = r Y dt + c Y <-dB - Z dW, Y_T = xi: by time reversal Y is a
/// geometric Brownian motion in the reversed B, so
/// Y_t = xi exp((r - c^2/2)(T - t) + c (B_T - B_t)) and Z = 0.
inline SolutionPath solve_linear_exact(double r, double c, const Vec& xi, const PathBundle& bundle) {
  require(bundle.ell == 1, "solve_linear_exact: scalar B required");
  require(static_cast<int>(xi.size()) == bundle.d, "solve_linear_exact: xi dimension must equal d");
  const auto& grid = bundle.grid;
  const int d = bundle.d;
  SolutionPath sol{grid, PathTensor(bundle.n_paths, grid.nodes(), d), PathTensor(bundle.n_paths, grid.nodes(), d, d),
                   {"linear_exact", 0, 0, 0, 0}};
  const std::size_t n = grid.n_steps;
  parallel_for(bundle.n_paths, [&](std::size_t k) {
    const double bT = bundle.B.at(k, n, 0);
    for (std::size_t i = 0; i <= n; ++i) {
      const double tau = grid.T - grid.time(i);
      sol.Y(k, i) = xi * std::exp((r - 0.5 * c * c) * tau + c * (bT - bundle.B.at(k, i, 0)));
    }
  });
  return sol;
}

// ---------------------------------------------------------------------------
// Regression
// ---------------------------------------------------------------------------

namespace detail {

/// Exponent tuples of all monomials of total degree <= degree in m variables.
inline std::vector<std::array<int, kMaxDim>> monomials(int m, int degree) {
  std::vector<std::array<int, kMaxDim>> out;
  std::array<int, kMaxDim> e{};
  for (int total = 0; total <= degree; ++total) {
    // enumerate tuples with sum == total in lexicographic order
    auto rec = [&](auto&& self, int pos, int left) -> void {
      if (pos == m - 1) {
        e[pos] = left;
        out.push_back(e);
        return;
      }
      for (int a = left; a >= 0; --a) {
        e[pos] = a;
        self(self, pos + 1, left - a);
      }
    };
    rec(rec, 0, total);
  }
  return out;
}

/// Least-squares projection onto polynomials of the standardized features of
/// one group. Falls back to lower degrees while the design is rank deficient.
class GroupRegression {
 public:
  GroupRegression(const Eigen::MatrixXd& x, int degree) {
    const auto n = x.rows();
    const int m = static_cast<int>(x.cols());
    Eigen::MatrixXd s = x;
    for (int c = 0; c < m; ++c) {
      double mean = 0.0;
      for (Eigen::Index r = 0; r < n; ++r) mean += x(r, c);
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (Eigen::Index r = 0; r < n; ++r) var += (x(r, c) - mean) * (x(r, c) - mean);
      const double sd = std::sqrt(var / static_cast<double>(n));
      for (Eigen::Index r = 0; r < n; ++r) s(r, c) = sd > 1e-12 * (1.0 + std::abs(mean)) ? (x(r, c) - mean) / sd : 0.0;
    }
    for (degree_ = std::max(degree, 0); degree_ >= 0; --degree_) {
      const auto mons = monomials(m, degree_);
      const auto K = static_cast<Eigen::Index>(mons.size());
      if (K > n && degree_ > 0) continue;
      design_.resize(n, K);
      for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index j = 0; j < K; ++j) {
          double v = 1.0;
          for (int c = 0; c < m; ++c)
            for (int a = 0; a < mons[j][c]; ++a) v *= s(r, c);
          design_(r, j) = v;
        }
      qr_.compute(design_);
      qr_.setThreshold(1e-10);
      if (qr_.rank() == K || degree_ == 0) break;
    }
  }

  int degree() const { return degree_; }

  /// Fitted values for each column of y.
  Eigen::MatrixXd fit(const Eigen::MatrixXd& y) const { return design_ * qr_.solve(y); }

 private:
  int degree_ = 0;
  Eigen::MatrixXd design_;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
};

/// Solves y - dt f(y) = target by damped Newton with a forward-difference
/// Jacobian. Returns the iteration count, or -1 without convergence.
template <class F>
int implicit_step(Vec& y, const Vec& target, double dt, F&& f, const SolveOptions& opt) {
  const int d = static_cast<int>(target.size());
  auto residual = [&](const Vec& v) -> Vec { return v - dt * f(v) - target; };
  y = target;
  Vec res = residual(y);
  const double scale = 1.0 + target.norm();
  for (int it = 0; it < opt.max_inner; ++it) {
    const double rn = res.norm();
    if (!std::isfinite(rn)) return -1;
    if (rn <= opt.inner_tol * scale) return it;
    Mat J(d, d);
    for (int c = 0; c < d; ++c) {
      Vec yp = y;
      const double h = 1e-7 * (1.0 + std::abs(y[c]));
      yp[c] += h;
      J.col(c) = (residual(yp) - res) / h;
    }
    const Vec step = J.fullPivLu().solve(res);
    double damp = 1.0;
    Vec trial = y - step;
    Vec trial_res = residual(trial);
    while (!(trial_res.norm() < rn) && damp > 1e-6) {
      damp *= 0.5;
      trial = y - damp * step;
      trial_res = residual(trial);
    }
    if (!(trial_res.norm() < rn)) return rn <= 1e-9 * scale ? it : -1;
    y = trial;
    res = trial_res;
  }
  return res.norm() <= opt.inner_tol * scale ? opt.max_inner : -1;
}

}  // namespace detail

/// Backward recursion over each fixed-B group:
///   Ytilde = Y_{i+1} + g(t_{i+1}, Y_{i+1}, Z_{i+1}) dB_i,
///   Z_i = E^[(Ytilde - E^[Ytilde]) dW_i^T] / dt,
///   Y_i - dt f(t_i, Y_i, Z_i) = E^[Ytilde],
/// with E^ the regression on polynomials of features at node i.
/// f_at(i, k, y, z) and g_at(i, k, y, z) give the generator on path k.
template <class FAt, class GAt>
SolutionPath backward_recursion(const PathBundle& bundle, const PathTensor& features, const PathTensor& terminal,
                                FAt&& f_at, GAt&& g_at, const BasisSpec& basis, const SolveOptions& opt = {},
                                std::string scheme = "regression") {
  const auto& grid = bundle.grid;
  const std::size_t P = bundle.n_paths, n = grid.n_steps, G = bundle.b_group_size;
  const int d = terminal.rows(), w = bundle.d, ell = bundle.ell;
  require(features.paths() == P && features.nodes() == grid.nodes(), "backward_recursion: feature shape mismatch");
  require(terminal.paths() == P && terminal.nodes() == 1, "backward_recursion: terminal shape mismatch");
  require(d == w, "backward_recursion: Y dimension must equal the W dimension");
  require(basis.degree >= 0, "backward_recursion: negative basis degree");

  SolutionPath sol{grid, PathTensor(P, grid.nodes(), d), PathTensor(P, grid.nodes(), d, w),
                   {std::move(scheme), basis.degree, 1, 0, 0}};
  const double dt = grid.dt();
  const int m = features.rows() * features.cols();
  std::vector<std::size_t> degraded(bundle.n_groups(), 0);
  std::vector<int> inner_max(bundle.n_groups(), 0);

  parallel_for(bundle.n_groups(), [&](std::size_t g) {
    const std::size_t k0 = g * G;
    for (std::size_t j = 0; j < G; ++j) sol.Y(k0 + j, n) = terminal(k0 + j, 0);
    Eigen::MatrixXd x(G, m), ytil(G, d), prod(G, d * w);
    for (std::size_t i = n; i-- > 0;) {
      for (std::size_t j = 0; j < G; ++j) {
        const std::size_t k = k0 + j;
        const Vec y1 = sol.Y.vec(k, i + 1);
        const Mat g1 = g_at(i + 1, k, y1, sol.Z.mat(k, i + 1));
        require(g1.rows() == d && g1.cols() == ell, "backward_recursion: g shape mismatch");
        ytil.row(j) = (y1 + g1 * bundle.dB(k, i)).transpose();
        x.row(j) = Eigen::Map<const Eigen::VectorXd>(features.ptr(k, i), m).transpose();
      }
      const detail::GroupRegression reg(x, basis.degree);
      if (reg.degree() < basis.degree && i > 0) ++degraded[g];  // node 0 often has one common state
      const Eigen::MatrixXd yhat = reg.fit(ytil);
      for (std::size_t j = 0; j < G; ++j) {
        const Vec dw = bundle.dW(k0 + j, i);
        for (int r = 0; r < d; ++r)
          for (int c = 0; c < w; ++c) prod(j, r + c * d) = (ytil(j, r) - yhat(j, r)) * dw[c];
      }
      const Eigen::MatrixXd zhat = reg.fit(prod) / dt;
      for (std::size_t j = 0; j < G; ++j) {
        const std::size_t k = k0 + j;
        auto Zi = sol.Z(k, i);
        for (int r = 0; r < d; ++r)
          for (int c = 0; c < w; ++c) Zi(r, c) = zhat(j, r + c * d);
        const Mat z = Zi;
        const Vec target = yhat.row(j).transpose();
        Vec y(d);
        const int its = detail::implicit_step(y, target, dt, [&](const Vec& v) -> Vec { return f_at(i, k, v, z); }, opt);
        if (its < 0)
          throw SolverError("inner implicit solve did not converge at node " + std::to_string(i) + " (path " +
                                std::to_string(k) + ")",
                            i);
        inner_max[g] = std::max(inner_max[g], its);
        sol.Y(k, i) = y;
      }
    }
  });
  for (std::size_t g = 0; g < degraded.size(); ++g) {
    sol.meta.degraded_nodes += degraded[g];
    sol.meta.max_inner_iterations = std::max(sol.meta.max_inner_iterations, inner_max[g]);
  }
  return sol;
}

/// Default regression features: the W path itself.
inline const PathTensor& default_features(const PathBundle& bundle) { return bundle.W; }

/// xi evaluated per path on the feature state at T.
inline PathTensor terminal_values(const GeneratorSpec& spec, const PathBundle& bundle, const PathTensor& features) {
  const std::size_t P = bundle.n_paths, n = bundle.grid.n_steps;
  PathTensor out(P, 1, spec.d);
  parallel_for(P, [&](std::size_t k) {
    TerminalData td{features.vec(k, n), bundle.W.vec(k, n), bundle.B.ptr(k, 0), bundle.grid.nodes(),
                    bundle.ell, bundle.grid.t0, bundle.grid.T};
    const Vec v = spec.xi(td);
    require(static_cast<int>(v.size()) == spec.d, "terminal: xi dimension mismatch");
    out(k, 0) = v;
  });
  return out;
}

inline void check_solver_inputs(const GeneratorSpec& spec, const PathBundle& bundle, const PathTensor& features) {
  spec.validate();
  require(spec.d == bundle.d, "solver: spec d does not match bundle");
  require(spec.ell == bundle.ell, "solver: spec ell does not match bundle");
  require(features.paths() == bundle.n_paths && features.nodes() == bundle.grid.nodes(),
          "solver: features do not match bundle");
}

inline SolutionPath solve_discrete(const GeneratorSpec& spec, const PathBundle& bundle, const PathTensor& features,
                                   const BasisSpec& basis = {}, const SolveOptions& opt = {}) {
  check_solver_inputs(spec, bundle, features);
  const auto& grid = bundle.grid;
  return backward_recursion(
      bundle, features, terminal_values(spec, bundle, features),
      [&](std::size_t i, std::size_t, const Vec& y, const Mat& z) { return spec.f(grid.time(i), y, z); },
      [&](std::size_t i, std::size_t, const Vec& y, const Mat& z) { return spec.g(grid.time(i), y, z); }, basis, opt);
}

inline SolutionPath solve_discrete(const GeneratorSpec& spec, const PathBundle& bundle, const BasisSpec& basis = {}) {
  return solve_discrete(spec, bundle, default_features(bundle), basis);
}

/// f and g evaluated along a solution, for the |Y|^p relation checks.
inline std::pair<PathTensor, PathTensor> generator_values(const GeneratorSpec& spec, const SolutionPath& sol) {
  const std::size_t P = sol.paths(), N = sol.grid.nodes();
  PathTensor fv(P, N, spec.d), gv(P, N, spec.d, spec.ell);
  parallel_for(P, [&](std::size_t k) {
    for (std::size_t i = 0; i < N; ++i) {
      const double t = sol.grid.time(i);
      fv(k, i) = spec.f(t, sol.Y.vec(k, i), sol.Z.mat(k, i));
      gv(k, i) = spec.g(t, sol.Y.vec(k, i), sol.Z.mat(k, i));
    }
  });
  return {std::move(fv), std::move(gv)};
}

// ---------------------------------------------------------------------------
// Picard map
// ---------------------------------------------------------------------------

/// One application of Phi: solve with generator f(s, Y_s, V_s) (z frozen at V)
/// and g(s, Y_s, Z_s). U does not enter; it is accepted for the map's signature.
inline SolutionPath phi_map(const GeneratorSpec& spec, const PathTensor& U, const PathTensor& V,
                            const PathBundle& bundle, const PathTensor& features, const BasisSpec& basis = {}) {
  check_solver_inputs(spec, bundle, features);
  require(U.paths() == bundle.n_paths && U.nodes() == bundle.grid.nodes() && U.rows() == spec.d,
          "phi_map: U shape mismatch");
  require(V.paths() == bundle.n_paths && V.nodes() == bundle.grid.nodes() && V.rows() == spec.d &&
              V.cols() == bundle.d,
          "phi_map: V shape mismatch");
  const auto& grid = bundle.grid;
  return backward_recursion(
      bundle, features, terminal_values(spec, bundle, features),
      [&](std::size_t i, std::size_t k, const Vec& y, const Mat&) { return spec.f(grid.time(i), y, V.mat(k, i)); },
      [&](std::size_t i, std::size_t, const Vec& y, const Mat& z) { return spec.g(grid.time(i), y, z); }, basis, {},
      "picard");
}

/// gamma = lambda^2/eps + lambda + 1 - alpha with eps = (1 - alpha)/2.
inline double default_gamma(double lambda, double alpha) {
  const double eps = 0.5 * (1.0 - alpha);
  return lambda * lambda / eps + lambda + 1.0 - alpha;
}

/// sqrt(E sum_i e^{gamma t_i} (|Y_i|^2 + |Z_i|^2) dt), left Riemann in time.
inline double weighted_distance(const PathTensor& Y1, const PathTensor& Z1, const PathTensor& Y2,
                                const PathTensor& Z2, const TimeGrid& grid, double gamma) {
  require(Y1.same_shape(Y2) && Z1.same_shape(Z2), "weighted_distance: shape mismatch");
  const std::size_t P = Y1.paths();
  std::vector<double> per(P);
  const double dt = grid.dt();
  parallel_for(P, [&](std::size_t k) {
    CompensatedSum s;
    for (std::size_t i = 0; i < grid.n_steps; ++i) {
      const double wt = std::exp(gamma * (grid.time(i) - grid.t0));
      s.add(wt * ((Y1.vec(k, i) - Y2.vec(k, i)).squaredNorm() + (Z1.mat(k, i) - Z2.mat(k, i)).squaredNorm()) * dt);
    }
    per[k] = s.value();
  });
  return std::sqrt(tree_mean(per));
}

inline double weighted_distance(const SolutionPath& a, const SolutionPath& b, double gamma) {
  return weighted_distance(a.Y, a.Z, b.Y, b.Z, a.grid, gamma);
}

inline double weighted_norm(const SolutionPath& a, double gamma) {
  const PathTensor zy(a.Y.paths(), a.Y.nodes(), a.Y.rows()), zz(a.Z.paths(), a.Z.nodes(), a.Z.rows(), a.Z.cols());
  return weighted_distance(a.Y, a.Z, zy, zz, a.grid, gamma);
}

struct PicardTrace {
  double gamma = 0.0;
  double tol = 0.0;
  double initial_increment = 0.0;  // ||X^1 - X^0||, distance from the initial guess
  std::vector<double> norms;       // ||X^{k+1} - X^k|| for k >= 1
  std::vector<double> ratios;      // norms[k] / norms[k-1]
  bool converged = false;
  std::size_t iterations = 0;
};

inline void write_picard_csv(std::ostream& os, const PicardTrace& tr) {
  csv::Writer w(os, {"iter", "norm", "ratio"});
  w.cell(std::size_t{0}).cell(tr.initial_increment).cell("").end_row();
  for (std::size_t k = 0; k < tr.norms.size(); ++k)
    w.cell(k + 1).cell(tr.norms[k]).cell(k == 0 ? std::string() : csv::num(tr.ratios[k - 1])), w.end_row();
}

/// Initial Picard guess with constant Y and Z values on every path and node.
inline std::pair<PathTensor, PathTensor> constant_guess(const PathBundle& bundle, int d, double y, double z) {
  return {PathTensor(bundle.n_paths, bundle.grid.nodes(), d, 1, y),
          PathTensor(bundle.n_paths, bundle.grid.nodes(), d, bundle.d, z)};
}

/// Iterates Phi from (U0, V0) until the weighted increment ||X^{k+1} - X^k||
/// drops to tol. The first application only moves off the initial guess and is
/// reported separately, so a generator without z-dependence converges in one
/// counted iteration.
inline std::pair<SolutionPath, PicardTrace> picard_solve(const GeneratorSpec& spec, const PathBundle& bundle,
                                                         const PathTensor& features, const BasisSpec& basis,
                                                         double gamma, double tol = 1e-6, std::size_t max_iter = 100,
                                                         std::optional<std::pair<PathTensor, PathTensor>> init = {}) {
  require(tol > 0.0, "picard_solve: tol must be positive");
  require(max_iter >= 1, "picard_solve: max_iter must be positive");
  auto start = init ? std::move(*init) : constant_guess(bundle, spec.d, 0.0, 0.0);
  PicardTrace tr;
  tr.gamma = gamma;
  tr.tol = tol;
  SolutionPath cur = phi_map(spec, start.first, start.second, bundle, features, basis);
  tr.initial_increment = weighted_distance(cur.Y, cur.Z, start.first, start.second, bundle.grid, gamma);
  for (std::size_t it = 0; it < max_iter; ++it) {
    SolutionPath next = phi_map(spec, cur.Y, cur.Z, bundle, features, basis);
    const double inc = weighted_distance(next, cur, gamma);
    if (!tr.norms.empty()) tr.ratios.push_back(tr.norms.back() > 0.0 ? inc / tr.norms.back() : 0.0);
    tr.norms.push_back(inc);
    cur = std::move(next);
    tr.iterations = it + 1;
    if (inc <= tol) {
      tr.converged = true;
      break;
    }
  }
  cur.meta.iterations = tr.iterations;
  return {std::move(cur), std::move(tr)};
}

/// ||Phi(U,V) - Phi(U',V')|| / ||(U - U', V - V')|| for two random inputs
/// with i.i.d. normal entries scaled by `scale`.
inline double contraction_ratio(const GeneratorSpec& spec, const PathBundle& bundle, const PathTensor& features,
                                const BasisSpec& basis, double gamma, std::uint64_t seed, double scale = 1.0) {
  auto draw = [&](std::uint64_t stream) {
    auto [U, V] = constant_guess(bundle, spec.d, 0.0, 0.0);
    PhiloxStream rng(seed, stream);
    for (double& u : U.data()) u = scale * rng.normal();
    for (double& v : V.data()) v = scale * rng.normal();
    return std::pair{std::move(U), std::move(V)};
  };
  const auto a = draw(1), b = draw(2);
  const SolutionPath pa = phi_map(spec, a.first, a.second, bundle, features, basis);
  const SolutionPath pb = phi_map(spec, b.first, b.second, bundle, features, basis);
  const double num = weighted_distance(pa, pb, gamma);
  const double den = weighted_distance(a.first, a.second, b.first, b.second, bundle.grid, gamma);
  return num / den;
}

// ---------------------------------------------------------------------------
// Feynman-Kac
// ---------------------------------------------------------------------------

/// Markovian data: forward dX = b dt + sigma dW, terminal l(X_T), and
/// generators depending on the forward state.
struct MarkovSpec {
  std::function<Vec(const Vec&)> b;
  std::function<Mat(const Vec&)> sigma;
  std::function<Vec(const Vec&)> l;
  std::function<Vec(double, const Vec&, const Vec&, const Mat&)> f;
  std::function<Mat(double, const Vec&, const Vec&, const Mat&)> g;
};

struct FieldSample {
  std::vector<double> per_group;  // first component of Y_t^{t,x} for each B group
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t failed_paths = 0;
};

/// u(t, x) = Y_t^{t,x}: simulate X on the bundle grid (which must start at t),
/// solve the coupled BDSDE with X as regression feature and report Y at the
/// first node per B group.
inline FieldSample feynman_kac(const MarkovSpec& ms, double t, const Vec& x, const PathBundle& bundle,
                               const BasisSpec& basis = {}) {
  require(std::abs(bundle.grid.t0 - t) <= 1e-12 * (1.0 + std::abs(t)), "feynman_kac: bundle grid must start at t");
  require(ms.b && ms.sigma && ms.l, "feynman_kac: missing forward data");
  const auto& grid = bundle.grid;
  const StatePath X = euler_forward(grid, ms.b, ms.sigma, x, bundle);
  require(X.failed_count() == 0, "feynman_kac: forward simulation produced non-finite states");
  const int d = bundle.d;
  PathTensor terminal(bundle.n_paths, 1, d);
  for (std::size_t k = 0; k < bundle.n_paths; ++k) {
    const Vec v = ms.l(X.X.vec(k, grid.n_steps));
    require(static_cast<int>(v.size()) == d, "feynman_kac: l must return a d-vector");
    terminal(k, 0) = v;
  }
  auto f = [&](std::size_t i, std::size_t k, const Vec& y, const Mat& z) -> Vec {
    return ms.f ? ms.f(grid.time(i), X.X.vec(k, i), y, z) : Vec(Vec::Zero(d));
  };
  auto g = [&](std::size_t i, std::size_t k, const Vec& y, const Mat& z) -> Mat {
    return ms.g ? ms.g(grid.time(i), X.X.vec(k, i), y, z) : Mat(Mat::Zero(d, bundle.ell));
  };
  const SolutionPath sol = backward_recursion(bundle, X.X, terminal, f, g, basis, {}, "feynman_kac");
  FieldSample out;
  out.per_group.resize(bundle.n_groups());
  for (std::size_t gi = 0; gi < bundle.n_groups(); ++gi) out.per_group[gi] = sol.Y.at(gi * bundle.b_group_size, 0, 0);
  out.mean = tree_mean(out.per_group);
  std::vector<double> sq(out.per_group.size());
  for (std::size_t gi = 0; gi < sq.size(); ++gi) sq[gi] = (out.per_group[gi] - out.mean) * (out.per_group[gi] - out.mean);
  const double n = static_cast<double>(sq.size());
  out.stderr_ = n > 1 ? std::sqrt(tree_sum(sq) / (n - 1.0) / n) : 0.0;
  return out;
}

}  // namespace bdsde
