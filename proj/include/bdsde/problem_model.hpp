#pragma once

// BDSDE data (xi, f, g) with their structural constants, probe-based
// assumption checks, the truncation operators q_n / theta_r / psi_r and the
// approximation ladders built from them, plus a catalog of test problems.

#include "bdsde/csv.hpp"
#include "bdsde/linalg.hpp"
#include "bdsde/parallel.hpp"
#include "bdsde/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace bdsde {

/// What the terminal condition may look at: the forward state and W at T,
/// and the full B path of this sample (nodes x ell, node-major).
struct TerminalData {
  Vec x_T;
  Vec w_T;
  const double* b_path = nullptr;
  std::size_t b_nodes = 0;
  int ell = 1;
  double t0 = 0.0;
  double T = 1.0;

  Vec b_at(std::size_t node) const { return Eigen::Map<const Eigen::VectorXd>(b_path + node * ell, ell); }
};

using DriftFn = std::function<Vec(double t, const Vec& y, const Mat& z)>;
using NoiseFn = std::function<Mat(double t, const Vec& y, const Mat& z)>;
using TerminalFn = std::function<Vec(const TerminalData&)>;

struct GeneratorSpec {
  std::string name;
  int d = 1;    // dimension of Y (and of W)
  int ell = 1;  // dimension of B
  DriftFn f;
  NoiseFn g;
  TerminalFn xi;
  double mu = 0.0;      // monotonicity constant
  double lambda = 1.0;  // Lipschitz / growth constant, > 0
  double alpha = 0.5;   // z-contraction constant of g, in (0, 1)
  double p = 2.0;       // integrability exponent, in (1, 2]
  std::function<double(double)> phi;  // growth bound |f(t,y,0)| <= |f(t,0,0)| + phi(|y|)
  std::optional<double> xi_bound;     // sup |xi| when the data are bounded
  std::optional<double> f0_bound;     // sup_t |f(t,0,0)| when bounded

  bool bounded_data() const { return xi_bound.has_value() && f0_bound.has_value(); }

  void validate() const {
    require_dim(d, "GeneratorSpec: d");
    require_dim(ell, "GeneratorSpec: ell");
    require(static_cast<bool>(f) && static_cast<bool>(g) && static_cast<bool>(xi), "GeneratorSpec: missing data");
    require(lambda > 0.0, "GeneratorSpec: lambda must be positive");
    require(alpha > 0.0 && alpha < 1.0, "GeneratorSpec: alpha must lie in (0, 1)");
    require(p > 1.0 && p <= 2.0, "GeneratorSpec: p must lie in (1, 2]");
  }
};

inline Vec f_zero(const GeneratorSpec& spec, double t) {
  return spec.f(t, Vec::Zero(spec.d), Mat::Zero(spec.d, spec.d));
}

inline Mat g_zero(const GeneratorSpec& spec, double t) {
  return spec.g(t, Vec::Zero(spec.d), Mat::Zero(spec.d, spec.d));
}

// ---------------------------------------------------------------------------
// Assumption probes
// ---------------------------------------------------------------------------

struct AssumptionCheck {
  std::string name;
  bool pass = true;
  double worst_violation = 0.0;  // normalized, >= 0
};

struct AssumptionReport {
  static constexpr double kTolerance = 1e-9;

  std::vector<AssumptionCheck> checks;
  std::size_t probe_count = 0;
  std::uint64_t seed = 0;

  bool all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });
  }
  const AssumptionCheck& operator[](const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return c;
    throw std::out_of_range("AssumptionReport: no check named " + name);
  }
};

inline void write_assumption_csv(std::ostream& os, const AssumptionReport& rep) {
  csv::Writer w(os, {"assumption", "verdict", "worst_violation", "probes", "seed"});
  for (const auto& c : rep.checks)
    w.cell(c.name).cell(c.pass ? "pass" : "fail").cell(c.worst_violation).cell(rep.probe_count)
        .cell(std::to_string(rep.seed)), w.end_row();
}

namespace detail {

/// Heavy-tailed probe: normal times a log-normal scale, so probes span
/// many orders of magnitude.
inline double heavy_probe(PhiloxStream& rng) {
  const double scale = std::exp(1.5 * rng.normal());
  return rng.normal() * scale;
}

struct Probe {
  double t;
  Vec y1, y2;
  Mat z1, z2;
};

inline Probe draw_probe(const GeneratorSpec& spec, double t0, double T, std::uint64_t seed, std::size_t index) {
  PhiloxStream rng(seed, index);
  Probe pr{t0 + (T - t0) * rng.uniform(), Vec(spec.d), Vec(spec.d), Mat(spec.d, spec.d), Mat(spec.d, spec.d)};
  for (int r = 0; r < spec.d; ++r) pr.y1[r] = heavy_probe(rng);
  for (int r = 0; r < spec.d; ++r)
    for (int c = 0; c < spec.d; ++c) pr.z1(r, c) = heavy_probe(rng);
  // every fourth probe is a near pair, which stresses local slopes
  const bool near = index % 4 == 3;
  for (int r = 0; r < spec.d; ++r) pr.y2[r] = near ? pr.y1[r] + 1e-3 * rng.normal() : heavy_probe(rng);
  for (int r = 0; r < spec.d; ++r)
    for (int c = 0; c < spec.d; ++c) pr.z2(r, c) = near ? pr.z1(r, c) + 1e-3 * rng.normal() : heavy_probe(rng);
  return pr;
}

inline double normalized_excess(double lhs, double rhs, double scale) {
  return std::max(0.0, lhs - rhs) / (1.0 + scale);
}

/// Runs `eval(probe) -> violations[k]` over all probes and keeps the max per check.
template <class Eval>
std::vector<double> probe_max(const GeneratorSpec& spec, std::size_t count, std::uint64_t seed, std::size_t n_checks,
                              double t0, double T, Eval&& eval) {
  std::vector<double> per(count * n_checks, 0.0);
  parallel_for(count, [&](std::size_t j) {
    const auto pr = draw_probe(spec, t0, T, seed, j);
    const auto v = eval(pr);
    for (std::size_t c = 0; c < n_checks; ++c) per[j * n_checks + c] = std::isnan(v[c]) ? INFINITY : v[c];
  });
  std::vector<double> worst(n_checks, 0.0);
  for (std::size_t j = 0; j < count; ++j)
    for (std::size_t c = 0; c < n_checks; ++c) worst[c] = std::max(worst[c], per[j * n_checks + c]);
  return worst;
}

inline AssumptionCheck make_check(std::string name, double worst) {
  return {std::move(name), worst <= AssumptionReport::kTolerance, worst};
}

}  // namespace detail

/// Probes the structural conditions: Lipschitz in z with lambda, monotone in y
/// with mu, and |g1 - g2|^2 <= lambda |dy|^2 + alpha |dz|^2. Violations are
/// normalized by the magnitude of the compared quantities so that rounding
/// in large probes does not register.
inline AssumptionReport check_structure(const GeneratorSpec& spec, std::size_t probe_count, std::uint64_t seed,
                                 double t0 = 0.0, double T = 1.0) {
  require(probe_count >= 1, "check_structure: probe_count must be positive");
  spec.validate();
  const auto worst = detail::probe_max(spec, probe_count, seed, 3, t0, T, [&](const detail::Probe& pr) {
    const Vec f11 = spec.f(pr.t, pr.y1, pr.z1);
    const Vec f12 = spec.f(pr.t, pr.y1, pr.z2);
    const Vec f21 = spec.f(pr.t, pr.y2, pr.z1);
    const Mat g11 = spec.g(pr.t, pr.y1, pr.z1);
    const Mat g22 = spec.g(pr.t, pr.y2, pr.z2);
    const double dz = (pr.z1 - pr.z2).norm();
    const Vec dy = pr.y1 - pr.y2;
    const double dy2 = dy.squaredNorm();

    const double lhs1 = (f11 - f12).norm();
    const double v1 = detail::normalized_excess(lhs1, spec.lambda * dz, f11.norm() + f12.norm() + spec.lambda * dz);

    const double lhs2 = dy.dot(f11 - f21);
    const double v2 = detail::normalized_excess(lhs2, spec.mu * dy2,
                                                std::sqrt(dy2) * (f11.norm() + f21.norm()) + std::abs(spec.mu) * dy2);

    const double lhs3 = (g11 - g22).squaredNorm();
    const double rhs3 = spec.lambda * dy2 + spec.alpha * dz * dz;
    const double gs = g11.norm() + g22.norm();
    const double v3 = detail::normalized_excess(lhs3, rhs3, gs * gs + rhs3);
    return std::array<double, 3>{v1, v2, v3};
  });
  return {{detail::make_check("lipschitz_z", worst[0]), detail::make_check("monotone_y", worst[1]),
           detail::make_check("noise_contraction", worst[2])},
          probe_count,
          seed};
}

/// Probes the full assumption set: the structural checks plus g(t,0,0) = 0 and
/// the growth bound |f(t,y,0)| <= |f(t,0,0)| + phi(|y|) when phi is supplied.
inline AssumptionReport check_assumptions(const GeneratorSpec& spec, std::size_t probe_count, std::uint64_t seed,
                                          double t0 = 0.0, double T = 1.0) {
  AssumptionReport rep = check_structure(spec, probe_count, seed, t0, T);
  const auto worst = detail::probe_max(spec, probe_count, seed ^ 0x4833ull, 2, t0, T, [&](const detail::Probe& pr) {
    const double g0 = g_zero(spec, pr.t).norm();
    double v4 = 0.0;
    if (spec.phi) {
      const double lhs = spec.f(pr.t, pr.y1, Mat::Zero(spec.d, spec.d)).norm();
      const double rhs = f_zero(spec, pr.t).norm() + spec.phi(pr.y1.norm());
      v4 = detail::normalized_excess(lhs, rhs, rhs);
    }
    return std::array<double, 2>{g0, v4};
  });
  rep.checks.push_back(detail::make_check("noise_at_zero", worst[0]));
  if (spec.phi) rep.checks.push_back(detail::make_check("growth", worst[1]));
  return rep;
}

/// |f(t,y1,z) - f(t,y2,z)| <= L |y1 - y2| probe; monotone generators need
/// not pass this.
inline AssumptionReport check_lipschitz_y(const GeneratorSpec& spec, double L, std::size_t probe_count,
                                          std::uint64_t seed, double t0 = 0.0, double T = 1.0) {
  const auto worst = detail::probe_max(spec, probe_count, seed, 1, t0, T, [&](const detail::Probe& pr) {
    const Vec a = spec.f(pr.t, pr.y1, pr.z1);
    const Vec b = spec.f(pr.t, pr.y2, pr.z1);
    const double dy = (pr.y1 - pr.y2).norm();
    return std::array<double, 1>{detail::normalized_excess((a - b).norm(), L * dy, L * dy)};
  });
  return {{detail::make_check("lipschitz_y", worst[0])}, probe_count, seed};
}

// ---------------------------------------------------------------------------
// Truncations
// ---------------------------------------------------------------------------

/// q_n(z) = z n / (|z| v n): identity inside the radius-n ball, radial
/// projection outside.
template <class Derived>
auto q_n(const Eigen::MatrixBase<Derived>& z, double n) {
  require(n > 0.0, "q_n: level must be positive");
  using Plain = typename Derived::PlainObject;
  const double nz = z.norm();
  return Plain(nz > n ? Plain(z * (n / nz)) : Plain(z));
}

/// Smooth cutoff: 1 on |y| <= r, 0 on |y| >= r + 1, cubic smoothstep between.
inline double theta_r(const Vec& y, double r) {
  require(r > 0.0, "theta_r: radius must be positive");
  const double u = y.norm() - r;
  if (u <= 0.0) return 1.0;
  if (u >= 1.0) return 0.0;
  return 1.0 - u * u * (3.0 - 2.0 * u);
}

namespace detail {

/// Fixed probe directions: +-e_j first, then evenly spaced angles (d = 2) or
/// seeded normals (d >= 3). 64 in total unless d = 1.
inline std::vector<Vec> probe_directions(int d) {
  std::vector<Vec> dirs;
  for (int j = 0; j < d; ++j)
    for (double s : {1.0, -1.0}) {
      Vec e = Vec::Zero(d);
      e[j] = s;
      dirs.push_back(e);
    }
  if (d == 1) return dirs;
  PhiloxStream rng(0x9E3779B97F4A7C15ull, 64);
  for (int k = 0; static_cast<int>(dirs.size()) < 64; ++k) {
    Vec v(d);
    if (d == 2) {
      const double a = 2.0 * std::numbers::pi * (k + 0.5) / (64 - 2 * d);
      v << std::cos(a), std::sin(a);
    } else {
      for (int j = 0; j < d; ++j) v[j] = rng.normal();
      v.normalize();
    }
    dirs.push_back(v);
  }
  return dirs;
}

}  // namespace detail

/// Lower bound for psi_r(t) = sup_{|y|<r} |f(t,y,0) - f0_t|.
///
/// Probe points are drawn from one r-independent master set and filtered by
/// |y| < r, so the estimate is non-decreasing in r. The master set is a
/// dyadic radial grid (radii 2^m k/32 for every level 2^m up to the first
/// one covering r, 64 directions) plus `random_probes` seeded points.
inline double psi_r(const GeneratorSpec& spec, double t, double r, std::size_t random_probes = 1000) {
  require(r > 0.0, "psi_r: radius must be positive");
  const Vec f0 = f_zero(spec, t);
  const Mat z0 = Mat::Zero(spec.d, spec.d);
  const auto dirs = detail::probe_directions(spec.d);
  double best = 0.0;
  auto consider = [&](const Vec& y) {
    if (y.norm() >= r) return;
    const double v = (spec.f(t, y, z0) - f0).norm();
    if (std::isfinite(v)) best = std::max(best, v);
  };
  const int top = static_cast<int>(std::ceil(std::log2(r)));
  for (int m = -8; m <= top; ++m) {
    const double level = std::ldexp(1.0, m);
    for (int k = 1; k <= 32; ++k)
      for (const auto& dir : dirs) consider(dir * (level * k / 32.0));
  }
  PhiloxStream rng(0x7073695F72ull, static_cast<std::uint64_t>(spec.d));
  for (std::size_t j = 0; j < random_probes; ++j) {
    Vec y(spec.d);
    for (int c = 0; c < spec.d; ++c) y[c] = detail::heavy_probe(rng);
    consider(y);
  }
  return best;
}

/// Truncated generator h_n(t,y,z) = theta_r(y) (f(t,y,q_n(z)) - f0_t) n / (pi_{r+1}(t) v n) + f0_t,
/// with pi_{r+1} taken as psi_{r+1}, tabulated on `psi_nodes` points of
/// [t0, T] (upper envelope of the two neighbouring nodes in between).
inline GeneratorSpec truncated_generator(const GeneratorSpec& spec, double r, double n, double t0 = 0.0,
                                           double T = 1.0, std::size_t psi_nodes = 33) {
  spec.validate();
  require(r > 0.0 && n > 0.0, "truncated_generator: r and n must be positive");
  if (spec.bounded_data()) {
    const double bound = std::exp((1.0 + spec.lambda * spec.lambda) * (T - t0)) *
                         (*spec.xi_bound + (T - t0) * *spec.f0_bound);
    require(bound < r, "truncated_generator: radius violates exp((1+lambda^2)T)(|xi| + T|f0|) < r");
  }
  auto table = std::make_shared<std::vector<double>>(psi_nodes);
  for (std::size_t j = 0; j < psi_nodes; ++j)
    (*table)[j] = psi_r(spec, t0 + (T - t0) * j / (psi_nodes - 1.0), r + 1.0);
  auto psi_at = [table, t0, T, psi_nodes](double t) {
    const double s = std::clamp((t - t0) / (T - t0), 0.0, 1.0) * (psi_nodes - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(s));
    const auto hi = std::min(lo + 1, psi_nodes - 1);
    return std::max((*table)[lo], (*table)[hi]);
  };

  GeneratorSpec out = spec;
  out.name = spec.name + "/truncated(r=" + csv::num(r) + ",n=" + csv::num(n) + ")";
  const auto f = spec.f;
  const int d = spec.d;
  out.f = [f, r, n, d, psi_at](double t, const Vec& y, const Mat& z) -> Vec {
    const Vec f0 = f(t, Vec::Zero(d), Mat::Zero(d, d));
    const double th = theta_r(y, r);
    if (th == 0.0) return f0;
    const double damp = n / std::max(psi_at(t), n);
    return th * (f(t, y, q_n(z, n)) - f0) * damp + f0;
  };
  // Lipschitz-in-y on the cutoff region, estimated by probing and padded.
  out.mu = std::max(spec.mu, 0.0);
  double slope = 0.0;
  PhiloxStream rng(0x53746570ull, 1);
  for (int j = 0; j < 4000; ++j) {
    Vec y1(d), y2(d);
    Mat z(d, d);
    for (int c = 0; c < d; ++c) {
      y1[c] = (r + 1.0) * (2.0 * rng.uniform() - 1.0);
      y2[c] = y1[c] + 1e-3 * rng.normal();
    }
    for (int c = 0; c < d * d; ++c) z(c % d, c / d) = n * (2.0 * rng.uniform() - 1.0);
    const double t = t0 + (T - t0) * rng.uniform();
    const double dy = (y1 - y2).norm();
    if (dy > 0.0) slope = std::max(slope, (out.f(t, y1, z) - out.f(t, y2, z)).norm() / dy);
  }
  out.mu = std::max(out.mu, 1.25 * slope);
  out.xi_bound = spec.xi_bound;
  out.f0_bound = spec.f0_bound;
  return out;
}

/// Truncated data: xi_n = q_n(xi), f_n = f - f0 + q_n(f0).
inline GeneratorSpec truncated_data(const GeneratorSpec& spec, double n) {
  spec.validate();
  require(n >= 1.0, "truncated_data: level must be at least 1");
  GeneratorSpec out = spec;
  out.name = spec.name + "/truncated_data(n=" + csv::num(n) + ")";
  const auto xi = spec.xi;
  const auto f = spec.f;
  const int d = spec.d;
  out.xi = [xi, n](const TerminalData& td) -> Vec { return q_n(xi(td), n); };
  out.f = [f, n, d](double t, const Vec& y, const Mat& z) -> Vec {
    const Vec f0 = f(t, Vec::Zero(d), Mat::Zero(d, d));
    return f(t, y, z) - f0 + q_n(f0, n);
  };
  out.xi_bound = spec.xi_bound ? std::min(*spec.xi_bound, n) : n;
  out.f0_bound = spec.f0_bound ? std::min(*spec.f0_bound, n) : n;
  return out;
}

/// Data scaling (xi, f, g) -> (s xi, f - f0 + s f0, g - g0 + s g0); the
/// structural constants are unchanged.
inline GeneratorSpec scale_data(const GeneratorSpec& spec, double s) {
  GeneratorSpec out = spec;
  out.name = spec.name + "*" + csv::num(s);
  const auto xi = spec.xi;
  const auto f = spec.f;
  const auto g = spec.g;
  const int d = spec.d;
  out.xi = [xi, s](const TerminalData& td) -> Vec { return s * xi(td); };
  out.f = [f, s, d](double t, const Vec& y, const Mat& z) -> Vec {
    const Vec f0 = f(t, Vec::Zero(d), Mat::Zero(d, d));
    return f(t, y, z) + (s - 1.0) * f0;
  };
  out.g = [g, s, d](double t, const Vec& y, const Mat& z) -> Mat {
    const Mat g0 = g(t, Vec::Zero(d), Mat::Zero(d, d));
    return g(t, y, z) + (s - 1.0) * g0;
  };
  if (spec.xi_bound) out.xi_bound = s * *spec.xi_bound;
  if (spec.f0_bound) out.f0_bound = s * *spec.f0_bound;
  return out;
}

// ---------------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------------

/// Named parameters for catalog entries. `xi_mode` selects the terminal
/// condition: "const" (xi), "smooth" (xi (1 + sin x_T / 2)), "heavy"
/// (Pareto tail with index 1.75, so only moments below 1.75 are finite).
struct CatalogParams {
  std::map<std::string, double> values;
  std::string xi_mode = "const";

  double get(const std::string& key, double fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
  }
};

inline const std::vector<std::string>& catalog_names() {
  static const std::vector<std::string> names{"linear_pricing", "monotone_cubic", "lipschitz_smooth"};
  return names;
}

inline const std::map<std::string, std::vector<std::string>>& catalog_parameters() {
  static const std::map<std::string, std::vector<std::string>> keys{
      {"linear_pricing", {"r", "theta", "c", "xi", "d", "alpha"}},
      {"monotone_cubic", {"a", "h", "lambda", "alpha", "xi", "d", "p"}},
      {"lipschitz_smooth", {"lambda", "alpha", "xi", "d", "p"}},
  };
  return keys;
}

namespace detail {

inline constexpr double kHeavyTailIndex = 1.75;

inline TerminalFn make_terminal(const std::string& mode, double level, int d) {
  if (mode == "const") return [level, d](const TerminalData&) -> Vec { return Vec::Constant(d, level); };
  if (mode == "smooth")
    return [level, d](const TerminalData& td) -> Vec {
      Vec out(d);
      for (int j = 0; j < d; ++j) out[j] = level * (1.0 + 0.5 * std::sin(td.x_T[j % td.x_T.size()]));
      return out;
    };
  if (mode == "heavy")
    return [level, d](const TerminalData& td) -> Vec {
      // uniform from the standardized forward state, then a Pareto transform
      Vec out(d);
      const double scale = std::sqrt(td.T - td.t0);
      for (int j = 0; j < d; ++j) {
        const double w = td.x_T[j % td.x_T.size()] / scale;
        const double u = std::erfc(std::abs(w) / std::numbers::sqrt2);  // P(|N| > |w|), in (0, 1]
        const double mag = std::pow(std::max(u, 1e-300), -1.0 / kHeavyTailIndex) - 1.0;
        out[j] = level * (w < 0.0 ? -mag : mag);
      }
      return out;
    };
  throw std::domain_error("catalog: unknown xi_mode '" + mode + "'");
}

inline std::optional<double> terminal_bound(const std::string& mode, double level, int d) {
  if (mode == "const") return std::abs(level) * std::sqrt(static_cast<double>(d));
  if (mode == "smooth") return 1.5 * std::abs(level) * std::sqrt(static_cast<double>(d));
  return std::nullopt;
}

}  // namespace detail

/// Test problems.
///   linear_pricing(r, theta, c):   f = r y + z theta, g = c y (l = 1)
///   monotone_cubic(a, h, lambda, alpha):
///       f = -a y|y|^2 + h cos(t) + (lambda/2) sin(diag z),
///       g = sqrt(lambda/2) tanh(y) + sqrt(alpha/2) z
///   lipschitz_smooth(lambda, alpha):
///       f = -(lambda/2) y - (lambda/4) sin(y) + (lambda/2) sin(diag z) + (1 + cos(2 pi t))/2,
///       g = sqrt(lambda/2) sin(y) + sqrt(alpha/2) z
inline GeneratorSpec catalog(const std::string& name, const CatalogParams& params = {}) {
  const auto known = catalog_parameters().find(name);
  if (known == catalog_parameters().end()) throw std::domain_error("catalog: unknown problem '" + name + "'");
  for (const auto& [key, _] : params.values)
    if (std::find(known->second.begin(), known->second.end(), key) == known->second.end())
      throw std::domain_error("catalog: unknown parameter '" + key + "' for " + name);

  const int d = static_cast<int>(params.get("d", 1));
  require_dim(d, "catalog: d");
  const double xi_level = params.get("xi", 1.0);

  GeneratorSpec spec;
  spec.name = name;
  spec.d = d;
  spec.xi = detail::make_terminal(params.xi_mode, xi_level, d);
  spec.xi_bound = detail::terminal_bound(params.xi_mode, xi_level, d);

  // diag(z) as a vector; with d x l blocks the first min(d, l) columns
  auto diag_of = [](const Mat& z) {
    Vec v(z.rows());
    for (int j = 0; j < z.rows(); ++j) v[j] = z(j, std::min<int>(j, z.cols() - 1));
    return v;
  };

  if (name == "linear_pricing") {
    const double r = params.get("r", 0.05), theta = params.get("theta", 0.0), c = params.get("c", 0.3);
    Vec th = Vec::Constant(d, theta);
    spec.ell = 1;
    spec.f = [r, th](double, const Vec& y, const Mat& z) -> Vec { return r * y + z * th; };
    spec.g = [c](double, const Vec& y, const Mat&) -> Mat { return c * y; };
    spec.mu = r;
    spec.lambda = std::max({th.norm(), c * c, 1e-12});
    spec.alpha = params.get("alpha", 0.5);
    spec.p = 2.0;
    spec.phi = [r](double ny) { return std::abs(r) * ny; };
    spec.f0_bound = 0.0;
    return spec;
  }

  if (name == "monotone_cubic") {
    const double a = params.get("a", 1.0), h = params.get("h", 0.5);
    const double lambda = params.get("lambda", 1.0), alpha = params.get("alpha", 0.5);
    spec.ell = d;
    spec.f = [a, h, lambda, diag_of](double t, const Vec& y, const Mat& z) -> Vec {
      Vec out = -a * y.squaredNorm() * y + Vec::Constant(y.size(), h * std::cos(t));
      out += 0.5 * lambda * diag_of(z).array().sin().matrix();
      return out;
    };
    const double cy = std::sqrt(lambda / 2.0), cz = std::sqrt(alpha / 2.0);
    spec.g = [cy, cz](double, const Vec& y, const Mat& z) -> Mat {
      return cy * Mat(y.array().tanh().matrix().asDiagonal()) + cz * z;
    };
    spec.mu = 0.0;
    spec.lambda = lambda;
    spec.alpha = alpha;
    spec.p = params.get("p", 1.5);
    spec.phi = [a](double ny) { return a * ny * ny * ny; };
    spec.f0_bound = std::abs(h) * std::sqrt(static_cast<double>(d));
    return spec;
  }

  // lipschitz_smooth
  const double lambda = params.get("lambda", 1.0), alpha = params.get("alpha", 0.5);
  spec.ell = d;
  spec.f = [lambda, diag_of](double t, const Vec& y, const Mat& z) -> Vec {
    Vec out = -0.5 * lambda * y - 0.25 * lambda * y.array().sin().matrix();
    out += 0.5 * lambda * diag_of(z).array().sin().matrix();
    out += Vec::Constant(y.size(), 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * t)));
    return out;
  };
  const double cy = std::sqrt(lambda / 2.0), cz = std::sqrt(alpha / 2.0);
  spec.g = [cy, cz](double, const Vec& y, const Mat& z) -> Mat {
    return cy * Mat(y.array().sin().matrix().asDiagonal()) + cz * z;
  };
  spec.mu = -0.25 * lambda;
  spec.lambda = lambda;
  spec.alpha = alpha;
  spec.p = params.get("p", 2.0);
  spec.phi = [lambda](double ny) { return 0.75 * lambda * ny; };
  spec.f0_bound = std::sqrt(static_cast<double>(d));
  return spec;
}

}  // namespace bdsde
