#pragma once

// Discrete forward Ito and backward Kunita-Ito sums, the smoothed |x|^p
// calculus, and residual checkers for the Tanaka-type expansion and the
// |Y|^p inequality satisfied by BDSDE solutions.

#include "bdsde/grid_paths.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace bdsde {

// ---------------------------------------------------------------------------
// Stochastic sums
// ---------------------------------------------------------------------------

namespace detail {

inline void check_integrand(const PathTensor& integrand, const PathTensor& incr, std::size_t i0, std::size_t i1) {
  require(integrand.paths() == incr.paths(), "stochastic sum: path count mismatch");
  require(integrand.nodes() == incr.nodes() + 1, "stochastic sum: integrand must live on the grid nodes");
  require(integrand.cols() == incr.rows() && incr.cols() == 1, "stochastic sum: integrand/driver shape mismatch");
  require(i0 <= i1 && i1 <= incr.nodes(), "stochastic sum: node range out of order");
}

/// term = A * dx, written out so both summation directions produce
/// bit-identical products.
inline void mat_vec(const double* a, const double* dx, int rows, int cols, double* out) {
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int c = 0; c < cols; ++c) s += a[r + c * rows] * dx[c];
    out[r] = s;
  }
}

}  // namespace detail

/// Left-point sum over explicit increments. Output node k (k = 0..i1-i0)
/// holds sum_{i=i0}^{i0+k-1} H_i dX_i.
inline PathTensor forward_sum(const PathTensor& H, const PathTensor& dX, std::size_t i0, std::size_t i1) {
  detail::check_integrand(H, dX, i0, i1);
  const int rows = H.rows(), cols = H.cols();
  PathTensor out(H.paths(), i1 - i0 + 1, rows);
  parallel_for(H.paths(), [&](std::size_t k) {
    std::vector<CompensatedSum> acc(rows);
    double term[kMaxDim * kMaxDim];
    for (std::size_t i = i0; i < i1; ++i) {
      detail::mat_vec(H.ptr(k, i), dX.ptr(k, i), rows, cols, term);
      for (int r = 0; r < rows; ++r) {
        acc[r].add(term[r]);
        out.at(k, i - i0 + 1, r) = acc[r].value();
      }
    }
  });
  return out;
}

/// Right-point (Kunita backward) sum over explicit increments, accumulated
/// from i1 downwards. Output node k holds sum_{i=i0+k}^{i1-1} G_{i+1} dX_i.
inline PathTensor backward_sum(const PathTensor& G, const PathTensor& dX, std::size_t i0, std::size_t i1) {
  detail::check_integrand(G, dX, i0, i1);
  const int rows = G.rows(), cols = G.cols();
  PathTensor out(G.paths(), i1 - i0 + 1, rows);
  parallel_for(G.paths(), [&](std::size_t k) {
    std::vector<CompensatedSum> acc(rows);
    double term[kMaxDim * kMaxDim];
    for (std::size_t i = i1; i-- > i0;) {
      detail::mat_vec(G.ptr(k, i + 1), dX.ptr(k, i), rows, cols, term);
      for (int r = 0; r < rows; ++r) {
        acc[r].add(term[r]);
        out.at(k, i - i0, r) = acc[r].value();
      }
    }
  });
  return out;
}

/// Forward Ito integral of H [path][node][r x d] against W on nodes [i0, i1].
inline PathTensor ito_integral(const PathTensor& H, const PathBundle& bundle, std::size_t i0, std::size_t i1) {
  require(H.cols() == bundle.d, "ito_integral: integrand columns must equal dim W");
  return forward_sum(H, increments(bundle.W), i0, i1);
}

/// Backward Kunita-Ito integral of G [path][node][r x l] against B on [i0, i1].
inline PathTensor backward_integral(const PathTensor& G, const PathBundle& bundle, std::size_t i0, std::size_t i1) {
  require(G.cols() == bundle.ell, "backward_integral: integrand columns must equal dim B");
  return backward_sum(G, increments(bundle.B), i0, i1);
}

// ---------------------------------------------------------------------------
// Smoothed power u_eps(x)^p with u_eps(x) = (|x|^2 + eps^2)^{1/2}
// ---------------------------------------------------------------------------

struct SmoothedPower {
  Vec x;
  double eps = 0.0;
  double p = 2.0;
  double u = 0.0;      // u_eps(x)
  double value = 0.0;  // u_eps(x)^p
  Vec grad;            // p u^{p-2} x

  /// trace(D^2 u_eps^p(x) M M*) = p u^{p-2} |M|^2 + p(p-2) u^{p-4} |M* x|^2.
  double hess_trace(const Mat& M) const {
    const double m2 = M.squaredNorm();
    if (p == 2.0) return 2.0 * m2;
    const double mx2 = (M.transpose() * x).squaredNorm();
    return p * std::pow(u, p - 2.0) * m2 + p * (p - 2.0) * std::pow(u, p - 4.0) * mx2;
  }

  /// Same trace split into the projection, |M|^2 and eps^2 parts used to
  /// pass to the limit eps -> 0.
  double hess_trace_split(const Mat& M) const {
    const double nx = x.norm();
    const double m2 = M.squaredNorm();
    double out = p * eps * eps * m2 * std::pow(u, p - 4.0);
    if (nx > 0.0) {
      const Vec xhat = x / nx;
      const double proj = (M.transpose() * xhat).squaredNorm();
      const double w = std::pow(nx / u, 4.0 - p) * std::pow(nx, p - 2.0);
      out += p * (2.0 - p) * w * (m2 - proj) + p * (p - 1.0) * w * m2;
    }
    return out;
  }

  /// C^eps(p) = (p/2) eps^2 u^{p-4} (|H|^2 - |G|^2).
  double correction_rate(const Mat& H, const Mat& G) const {
    if (eps == 0.0) return 0.0;
    return 0.5 * p * eps * eps * std::pow(u, p - 4.0) * (H.squaredNorm() - G.squaredNorm());
  }
};

namespace detail {
inline SmoothedPower smoothed_power(const Vec& x, double eps, double p) {
  SmoothedPower s;
  s.x = x;
  s.eps = eps;
  s.p = p;
  s.u = std::sqrt(x.squaredNorm() + eps * eps);
  s.value = std::pow(s.u, p);
  s.grad = (p == 2.0 ? 2.0 : p * std::pow(s.u, p - 2.0)) * x;
  return s;
}
}  // namespace detail

inline SmoothedPower smoothed_norm_terms(const Vec& x, double eps, double p) {
  require(eps > 0.0, "smoothed_norm_terms: eps must be positive");
  require(p >= 1.0, "smoothed_norm_terms: p must be at least 1");
  return detail::smoothed_power(x, eps, p);
}

/// |M|^2 - <xhat, M M* xhat>, with xhat = 0 at x = 0. Never negative in
/// exact arithmetic.
inline double projection_gap(const Vec& x, const Mat& M) {
  const double m2 = M.squaredNorm();
  const double nx = x.norm();
  if (nx == 0.0) return m2;
  const Vec xhat = x / nx;
  return m2 - (M.transpose() * xhat).squaredNorm();
}

/// Threshold implementing the indicator 1{X != 0} as |X| > tau_zero.
inline double zero_threshold(double scale) { return 1e-12 * (1.0 + std::abs(scale)); }

// ---------------------------------------------------------------------------
// Tanaka-type expansion residual
// ---------------------------------------------------------------------------

/// X_t = X0 + int K ds + int G <-dB + int H dW on the bundle grid.
struct Semimartingale {
  Vec X0;
  PathTensor K;  // [P][N+1][d x 1]
  PathTensor G;  // [P][N+1][d x l]
  PathTensor H;  // [P][N+1][d x dim W]
  const PathBundle* bundle = nullptr;

  int dim() const { return static_cast<int>(X0.size()); }

  void validate() const {
    require(bundle != nullptr, "Semimartingale: missing bundle");
    const std::size_t P = bundle->n_paths, N = bundle->grid.nodes();
    const int d = dim();
    require_dim(d, "Semimartingale: dimension");
    require(K.paths() == P && K.nodes() == N && K.rows() == d && K.cols() == 1, "Semimartingale: K shape");
    require(G.paths() == P && G.nodes() == N && G.rows() == d && G.cols() == bundle->ell, "Semimartingale: G shape");
    require(H.paths() == P && H.nodes() == N && H.rows() == d && H.cols() == bundle->d, "Semimartingale: H shape");
  }

  /// X_{i+1} = X_i + K_i dt + G_{i+1} dB_i + H_i dW_i.
  PathTensor path() const {
    validate();
    const auto& grid = bundle->grid;
    PathTensor X(bundle->n_paths, grid.nodes(), dim());
    const double dt = grid.dt();
    parallel_for(bundle->n_paths, [&](std::size_t k) {
      Vec x = X0;
      X(k, 0) = x;
      for (std::size_t i = 0; i < grid.n_steps; ++i) {
        x += K.vec(k, i) * dt + G.mat(k, i + 1) * bundle->dB(k, i) + H.mat(k, i) * bundle->dW(k, i);
        X(k, i + 1) = x;
      }
    });
    return X;
  }
};

struct TanakaReport {
  double p = 2.0;
  double eps = 0.0;
  std::size_t n_steps = 0;
  std::size_t node = 0;
  std::vector<double> lhs;         // u_eps^p(X_t) per path
  std::vector<double> rhs;         // six-term expansion per path
  std::vector<double> correction;  // L^eps_t(p) per path
  double residual_sup = 0.0;       // max over nodes <= t and paths
  double residual_rms = 0.0;       // RMS over paths at node t
  double correction_mean_abs = 0.0;
};

/// Both sides of the smoothed expansion of u_eps^p(X_t). Left-point
/// evaluation for the drift and dW terms, right-point for the <-dB terms.
inline TanakaReport tanaka_residual(const Semimartingale& sm, double p, double eps, std::size_t t) {
  require(p >= 1.0, "tanaka_residual: p must be at least 1");
  require(p <= 2.0, "tanaka_residual: p must not exceed 2");
  require(eps > 0.0 || (p == 2.0 && eps == 0.0), "tanaka_residual: eps must be positive unless p = 2");
  sm.validate();
  const auto& bundle = *sm.bundle;
  const auto& grid = bundle.grid;
  require(t <= grid.n_steps, "tanaka_residual: node out of range");

  const PathTensor X = sm.path();
  const double dt = grid.dt();
  const std::size_t P = bundle.n_paths;
  TanakaReport rep{p, eps, grid.n_steps, t, std::vector<double>(P), std::vector<double>(P), std::vector<double>(P)};
  std::vector<double> sup_per_path(P, 0.0);

  parallel_for(P, [&](std::size_t k) {
    CompensatedSum rhs, corr;
    rhs.add(detail::smoothed_power(X.vec(k, 0), eps, p).value);
    double sup = 0.0;
    for (std::size_t i = 0; i < t; ++i) {
      const auto left = detail::smoothed_power(X.vec(k, i), eps, p);
      const auto right = detail::smoothed_power(X.vec(k, i + 1), eps, p);
      const Mat Hi = sm.H.mat(k, i);
      const Mat Gi = sm.G.mat(k, i + 1);
      rhs.add(left.grad.dot(sm.K.vec(k, i)) * dt);
      rhs.add(right.grad.dot(Gi * bundle.dB(k, i)));
      rhs.add(left.grad.dot(Hi * bundle.dW(k, i)));
      rhs.add(-0.5 * right.hess_trace(Gi) * dt);
      rhs.add(0.5 * left.hess_trace(Hi) * dt);
      // L^eps: H part at the left point, G part at the right point
      corr.add((left.correction_rate(Hi, Mat::Zero(Gi.rows(), Gi.cols())) +
                right.correction_rate(Mat::Zero(Hi.rows(), Hi.cols()), Gi)) * dt);
      sup = std::max(sup, std::abs(right.value - rhs.value()));
    }
    rep.lhs[k] = detail::smoothed_power(X.vec(k, t), eps, p).value;
    rep.rhs[k] = rhs.value();
    rep.correction[k] = corr.value();
    sup_per_path[k] = sup;
  });

  std::vector<double> sq(P), abs_corr(P);
  for (std::size_t k = 0; k < P; ++k) {
    const double r = rep.lhs[k] - rep.rhs[k];
    sq[k] = r * r;
    abs_corr[k] = std::abs(rep.correction[k]);
    rep.residual_sup = std::max(rep.residual_sup, sup_per_path[k]);
  }
  rep.residual_rms = std::sqrt(tree_mean(sq));
  rep.correction_mean_abs = tree_mean(abs_corr);
  return rep;
}

// ---------------------------------------------------------------------------
// |Y|^p inequality for BDSDE solutions
// ---------------------------------------------------------------------------

/// c(p) = p(p-1)/2 and cbar(p) = p(3-p)/2.
inline double c_low(double p) { return p * (p - 1.0) / 2.0; }
inline double c_bar(double p) { return p * (3.0 - p) / 2.0; }

/// A discrete BDSDE trajectory with its generator values along the path.
struct BdsdeTrajectory {
  const PathTensor& Y;       // [P][N+1][d]
  const PathTensor& Z;       // [P][N+1][d x dim W]
  const PathTensor& f_vals;  // [P][N+1][d]
  const PathTensor& g_vals;  // [P][N+1][d x l]
  const PathBundle& bundle;

  void validate() const {
    const std::size_t P = bundle.n_paths, N = bundle.grid.nodes();
    const int d = Y.rows();
    require(Y.paths() == P && Y.nodes() == N && Y.cols() == 1, "trajectory: Y shape");
    require(Z.paths() == P && Z.nodes() == N && Z.rows() == d && Z.cols() == bundle.d, "trajectory: Z shape");
    require(f_vals.paths() == P && f_vals.nodes() == N && f_vals.rows() == d, "trajectory: f shape");
    require(g_vals.paths() == P && g_vals.nodes() == N && g_vals.rows() == d && g_vals.cols() == bundle.ell,
            "trajectory: g shape");
  }
};

namespace detail {

/// |y|^{p-2} 1{|y| > tau}; the p = 2 case is identically one.
inline double power_weight(double norm_y, double p, double tau) {
  if (p == 2.0) return 1.0;
  return norm_y > tau ? std::pow(norm_y, p - 2.0) : 0.0;
}

/// Per-path, per-start-node value of (RHS - LHS) for the |Y|^p relation on
/// [t, T]. With exact=false the quadratic coefficients are c(p), cbar(p)
/// (the inequality form); with exact=true they are the projection-resolved
/// equality coefficients, which at p = 2 give the Ito identity.
inline PathTensor power_relation_gap(const BdsdeTrajectory& tr, double p, bool exact) {
  tr.validate();
  const auto& grid = tr.bundle.grid;
  const std::size_t P = tr.bundle.n_paths, n = grid.n_steps;
  const double dt = grid.dt();
  PathTensor out(P, grid.nodes(), 1);
  parallel_for(P, [&](std::size_t k) {
    const double tau = zero_threshold(tr.Y.vec(k, n).norm());
    CompensatedSum rhs_tail, lhs_tail;
    const double yT = std::pow(tr.Y.vec(k, n).norm(), p);
    out.at(k, n, 0) = 0.0;
    for (std::size_t s = n; s-- > 0;) {
      const Vec ys = tr.Y.vec(k, s), yr = tr.Y.vec(k, s + 1);
      const double ns = ys.norm(), nr = yr.norm();
      const double ws = power_weight(ns, p, tau), wr = power_weight(nr, p, tau);
      const Mat Zs = tr.Z.mat(k, s), Gr = tr.g_vals.mat(k, s + 1);
      const Vec fs = tr.f_vals.vec(k, s);

      // p |y|^{p-1} <yhat, v> = p |y|^{p-2} <y, v>
      rhs_tail.add(p * ws * ys.dot(fs) * dt);
      rhs_tail.add(p * wr * yr.dot(Gr * tr.bundle.dB(k, s)));
      rhs_tail.add(-p * ws * ys.dot(Zs * tr.bundle.dW(k, s)));
      if (exact) {
        const double zq = (2.0 - p) * projection_gap(ys, Zs) + (p - 1.0) * Zs.squaredNorm();
        const double gq = (2.0 - p) * projection_gap(yr, Gr) + (p - 1.0) * Gr.squaredNorm();
        lhs_tail.add(0.5 * p * ws * zq * dt);
        rhs_tail.add(0.5 * p * wr * gq * dt);
      } else {
        lhs_tail.add(c_low(p) * ws * Zs.squaredNorm() * dt);
        rhs_tail.add(c_bar(p) * wr * Gr.squaredNorm() * dt);
      }
      const double lhs = std::pow(ns, p) + lhs_tail.value();
      out.at(k, s, 0) = yT + rhs_tail.value() - lhs;
    }
  });
  return out;
}

}  // namespace detail

/// RHS - LHS of the |Y|^p inequality for every start node t and path.
inline PathTensor power_slack_all(const BdsdeTrajectory& tr, double p) {
  require(p > 1.0 && p < 2.0, "power_slack: p must lie in (1, 2)");
  return detail::power_relation_gap(tr, p, false);
}

inline std::vector<double> power_slack(const BdsdeTrajectory& tr, double p, std::size_t t) {
  require(t <= tr.bundle.grid.n_steps, "power_slack: node out of range");
  const PathTensor all = power_slack_all(tr, p);
  std::vector<double> out(all.paths());
  for (std::size_t k = 0; k < all.paths(); ++k) out[k] = all.at(k, t, 0);
  return out;
}

/// Discretization residual of the exact p = 2 identity
/// |Y_t|^2 + int |Z|^2 = |Y_T|^2 + 2 int <Y,f> + int |g|^2 + 2 int <Y, g <-dB> - 2 int <Y, Z dW>.
inline PathTensor ito_identity_residual(const BdsdeTrajectory& tr) {
  return detail::power_relation_gap(tr, 2.0, true);
}

/// Reported discretization tolerance: max |p = 2 identity residual|.
inline double discretization_tolerance(const BdsdeTrajectory& tr) {
  const PathTensor r = ito_identity_residual(tr);
  double tol = 0.0;
  for (double v : r.data()) tol = std::max(tol, std::abs(v));
  return tol;
}

}  // namespace bdsde
