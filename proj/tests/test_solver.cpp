#include "bdsde/solver.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace bdsde;

namespace {

GeneratorSpec const_spec(DriftFn f, NoiseFn g, double xi) {
  GeneratorSpec s;
  s.name = "test";
  s.f = std::move(f);
  s.g = std::move(g);
  s.xi = [xi](const TerminalData&) { return Vec(Vec::Constant(1, xi)); };
  s.lambda = 1.0;
  s.alpha = 0.5;
  return s;
}

DriftFn zero_f() {
  return [](double, const Vec& y, const Mat&) { return Vec(Vec::Zero(y.size())); };
}
NoiseFn zero_g() {
  return [](double, const Vec& y, const Mat&) { return Mat(Mat::Zero(y.size(), 1)); };
}

double rms_diff(const PathTensor& a, const PathTensor& b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.data().size(); ++j) s += std::pow(a.data()[j] - b.data()[j], 2);
  return std::sqrt(s / a.data().size());
}

}  // namespace

TEST(LinearExact, DegenerateCases) {
  const auto b = sample_bundle(make_grid(0, 2, 8), 1, 1, 5, 1);
  const auto flat = solve_linear_exact(0.0, 0.0, Vec::Constant(1, 3.0), b);
  for (double v : flat.Y.data()) EXPECT_DOUBLE_EQ(v, 3.0);
  for (double v : flat.Z.data()) EXPECT_EQ(v, 0.0);
  const auto disc = solve_linear_exact(0.1, 0.0, Vec::Ones(1), b);
  for (std::size_t i = 0; i <= 8; ++i) EXPECT_DOUBLE_EQ(disc.Y.at(2, i, 0), std::exp(0.1 * (2.0 - b.grid.time(i))));
}

TEST(LinearExact, MatchesReversedClockSolution) {
  const auto b = sample_bundle(make_grid(0, 1, 16), 1, 1, 20, 2);
  const auto sol = solve_linear_exact(0.05, 0.3, Vec::Constant(1, 1.5), b);
  for (std::size_t k = 0; k < 20; ++k)
    for (std::size_t i = 0; i <= 16; ++i)
      EXPECT_NEAR(sol.Y.at(k, i, 0),
                  oracle::linear_bdsde(1.5, 0.05, 0.3, 1.0, b.grid.time(i), b.B.at(k, 16, 0), b.B.at(k, i, 0)), 1e-13);
}

TEST(LinearExact, SatisfiesIntegralEquationDiscretely) {
  // Y_t - xi - int r Y ds - int c Y <-dB -> 0 in RMS at rate dt^{1/2}
  const double r = 0.05, c = 0.3;
  auto fine = sample_bundle(make_grid(0, 1, 1024), 1, 1, 500, 3);
  std::vector<double> err;
  for (int level = 0; level < 4; ++level) {
    const auto sol = solve_linear_exact(r, c, Vec::Ones(1), fine);
    const std::size_t n = fine.grid.n_steps;
    double s = 0.0;
    for (std::size_t k = 0; k < fine.n_paths; ++k) {
      double acc = sol.Y.at(k, n, 0);
      for (std::size_t i = n; i-- > 0;) acc += r * sol.Y.at(k, i + 1, 0) * fine.grid.dt() + c * sol.Y.at(k, i + 1, 0) * fine.dB(k, i)[0];
      s += std::pow(sol.Y.at(k, 0, 0) - acc, 2);
    }
    err.insert(err.begin(), std::sqrt(s / fine.n_paths));
    fine = coarsen(fine);
  }
  for (std::size_t j = 1; j < err.size(); ++j) EXPECT_LT(err[j], err[j - 1]);
  EXPECT_GT(std::log2(err[0] / err[3]) / 3.0, 0.4);
}

TEST(Regression, Monomials) {
  EXPECT_EQ(detail::monomials(1, 3).size(), 4u);
  EXPECT_EQ(detail::monomials(2, 3).size(), 10u);
  EXPECT_EQ(detail::monomials(3, 2).size(), 10u);
}

TEST(Regression, ReproducesPolynomialsAndDegrades) {
  Eigen::MatrixXd x(50, 1), y(50, 1);
  for (int j = 0; j < 50; ++j) {
    x(j, 0) = j / 10.0 - 2.0;
    y(j, 0) = 1 - x(j, 0) + 0.5 * std::pow(x(j, 0), 3);
  }
  const detail::GroupRegression reg(x, 3);
  EXPECT_EQ(reg.degree(), 3);
  EXPECT_LT((reg.fit(y) - y).norm(), 1e-10);
  const detail::GroupRegression flat(Eigen::MatrixXd::Constant(50, 1, 2.0), 3);
  EXPECT_EQ(flat.degree(), 0);
  EXPECT_NEAR(flat.fit(y)(7, 0), y.mean(), 1e-12);
}

TEST(SolveDiscrete, ConstantTerminalIsAMartingale) {
  const auto b = sample_bundle(make_grid(0, 1, 10), 1, 1, 64, 4, 16);
  const auto sol = solve_discrete(const_spec(zero_f(), zero_g(), 2.0), b);
  for (double v : sol.Y.data()) EXPECT_NEAR(v, 2.0, 1e-12);
  for (double v : sol.Z.data()) EXPECT_NEAR(v, 0.0, 1e-10);
}

TEST(SolveDiscrete, TerminalIsExact) {
  CatalogParams params;
  params.xi_mode = "smooth";
  const auto spec = catalog("lipschitz_smooth", params);
  const auto b = sample_bundle(make_grid(0, 1, 8), 1, 1, 64, 4, 32);
  const auto sol = solve_discrete(spec, b);
  const auto xi = terminal_values(spec, b, b.W);
  for (std::size_t k = 0; k < 64; ++k) EXPECT_EQ(sol.Y.at(k, 8, 0), xi.at(k, 0, 0));
}

TEST(SolveDiscrete, ScalarDecayMatchesImplicitEuler) {
  // f = -y, g = 0: Y_t = xi e^{-(T - t)}; the scheme gives xi (1 + dt)^{-(n - i)}
  const auto spec = const_spec([](double, const Vec& y, const Mat&) { return Vec(-y); }, zero_g(), 1.5);
  for (std::size_t n : {8u, 64u}) {
    const auto b = sample_bundle(make_grid(0, 1, n), 1, 1, 32, 5, 32);
    const auto sol = solve_discrete(spec, b);
    for (std::size_t i = 0; i <= n; ++i) {
      EXPECT_NEAR(sol.Y.at(3, i, 0), oracle::implicit_euler_decay(1.5, b.grid.dt(), n, i), 1e-10);
      EXPECT_NEAR(sol.Y.at(3, i, 0), 1.5 * std::exp(-(1.0 - b.grid.time(i))), 1.5 / n);
    }
  }
}

TEST(SolveDiscrete, LinearPricingConverges) {
  const auto spec = catalog("linear_pricing", CatalogParams{{{"r", 0.05}, {"theta", 0.0}, {"c", 0.3}, {"xi", 1.0}}});
  auto b = sample_bundle(make_grid(0, 1, 512), 1, 1, 512, 6, 8);
  std::vector<double> err;
  for (int level = 0; level < 4; ++level) {
    const auto sol = solve_discrete(spec, b);
    const auto exact = solve_linear_exact(0.05, 0.3, Vec::Ones(1), b);
    err.insert(err.begin(), rms_diff(sol.Y, exact.Y));
    b = coarsen(b);
  }
  for (std::size_t j = 1; j < err.size(); ++j) EXPECT_LT(err[j], err[j - 1]);
  EXPECT_GT(std::log2(err[0] / err[3]) / 3.0, 0.4);
}

TEST(SolveDiscrete, RejectsMismatchedBundles) {
  const auto spec = catalog("lipschitz_smooth", CatalogParams{{{"d", 2.0}}});
  const auto b = sample_bundle(make_grid(0, 1, 4), 1, 1, 8, 1, 4);
  EXPECT_THROW(solve_discrete(spec, b), std::domain_error);
}

TEST(SolveDiscrete, InnerSolveFailureNamesNode) {
  const auto spec = const_spec([](double, const Vec& y, const Mat&) { return Vec(y.array().exp().matrix() * 1e6); },
                               zero_g(), 1.0);
  const auto b = sample_bundle(make_grid(0, 1, 4), 1, 1, 8, 1, 4);
  try {
    solve_discrete(spec, b);
    FAIL() << "expected a solver error";
  } catch (const SolverError& e) {
    EXPECT_EQ(e.node(), 3u);
    EXPECT_NE(std::string(e.what()).find("node 3"), std::string::npos);
  }
}

TEST(SolveDiscrete, MonotoneCubicIsStableWithLargeTerminal) {
  const auto spec = catalog("monotone_cubic", CatalogParams{{{"xi", 50.0}}});
  const auto b = sample_bundle(make_grid(0, 1, 16), 1, 1, 64, 7, 16);
  const auto sol = solve_discrete(spec, b);
  for (double v : sol.Y.data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_LT(std::abs(sol.Y.at(0, 0, 0)), 2.0);
}

TEST(SolveDiscrete, DeterministicAcrossWorkerCounts) {
  CatalogParams params;
  params.xi_mode = "smooth";
  const auto spec = catalog("monotone_cubic", params);
  const auto b = sample_bundle(make_grid(0, 1, 16), 1, 1, 256, 8, 32);
  set_worker_count(1);
  const auto a = solve_discrete(spec, b);
  set_worker_count(3);
  const auto c = solve_discrete(spec, b);
  set_worker_count(0);
  EXPECT_EQ(a.Y, c.Y);
  EXPECT_EQ(a.Z, c.Z);
}

TEST(SolveDiscrete, CsvExport) {
  const auto b = sample_bundle(make_grid(0, 1, 2), 1, 1, 4, 1, 2);
  const auto sol = solve_discrete(const_spec(zero_f(), zero_g(), 1.0), b);
  std::ostringstream os;
  write_solution_csv(os, sol, 1);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "path_id,node,t,Y1,Z11");
}

TEST(Picard, ZeroGeneratorConvergesInOneIteration) {
  const auto b = sample_bundle(make_grid(0, 1, 8), 1, 1, 64, 9, 16);
  const auto [sol, tr] = picard_solve(const_spec(zero_f(), zero_g(), 1.0), b, b.W, {}, 2.0);
  EXPECT_TRUE(tr.converged);
  EXPECT_EQ(tr.iterations, 1u);
  EXPECT_GT(tr.initial_increment, 0.0);
}

TEST(Picard, FixedPointAndDeterminism) {
  CatalogParams params;
  params.xi_mode = "smooth";
  const auto spec = catalog("lipschitz_smooth", params);
  const auto b = sample_bundle(make_grid(0, 1, 16), 1, 1, 512, 10, 64);
  const double gamma = default_gamma(spec.lambda, spec.alpha);
  const auto [sol, tr] = picard_solve(spec, b, b.W, {}, gamma, 1e-8);
  ASSERT_TRUE(tr.converged);
  const auto again = phi_map(spec, sol.Y, sol.Z, b, b.W);
  EXPECT_LE(weighted_distance(again, sol, gamma), 1e-8);
  const auto twice = phi_map(spec, sol.Y, sol.Z, b, b.W);
  EXPECT_EQ(again.Y, twice.Y);
  EXPECT_EQ(again.Z, twice.Z);
}

TEST(Picard, ContractionAndGeometricDecay) {
  CatalogParams params;
  params.xi_mode = "smooth";
  const auto spec = catalog("lipschitz_smooth", params);
  const auto b = sample_bundle(make_grid(0, 1, 16), 1, 1, 512, 11, 64);
  const double gamma = default_gamma(spec.lambda, spec.alpha);
  EXPECT_DOUBLE_EQ(gamma, 1.0 / 0.25 + 1.0 + 0.5);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) EXPECT_LT(contraction_ratio(spec, b, b.W, {}, gamma, seed), 1.0);
  const auto [sol, tr] = picard_solve(spec, b, b.W, {}, gamma);
  EXPECT_TRUE(tr.converged);
  EXPECT_LE(tr.iterations, 30u);
  for (double r : tr.ratios) EXPECT_LT(r, 1.0);
  std::ostringstream os;
  write_picard_csv(os, tr);
  EXPECT_EQ(os.str().substr(0, 15), "iter,norm,ratio");
}

TEST(Picard, NonConvergenceIsReported) {
  CatalogParams params;
  params.xi_mode = "smooth";
  const auto spec = catalog("lipschitz_smooth", params);
  const auto b = sample_bundle(make_grid(0, 1, 8), 1, 1, 64, 12, 16);
  const auto [sol, tr] = picard_solve(spec, b, b.W, {}, 2.0, 1e-300, 2);
  EXPECT_FALSE(tr.converged);
  EXPECT_EQ(tr.iterations, 2u);
  EXPECT_THROW(picard_solve(spec, b, b.W, {}, 2.0, 0.0), std::domain_error);
}

TEST(FeynmanKac, LinearTerminalIsAMartingale) {
  const auto b = sample_bundle(make_grid(0, 1, 4), 1, 1, 2000, 13, 100);
  MarkovSpec ms{[](const Vec& x) { return Vec(Vec::Zero(x.size())); }, [](const Vec&) { return Mat(Mat::Identity(1, 1)); },
                [](const Vec& x) { return x; }, nullptr, nullptr};
  const auto u = feynman_kac(ms, 0.0, Vec::Constant(1, 0.7), b);
  EXPECT_NEAR(u.mean, 0.7, 5 * u.stderr_ + 1e-12);
}

TEST(FeynmanKac, HeatKernelSecondMoment) {
  const auto b = sample_bundle(make_grid(0.25, 1, 4), 1, 1, 20000, 14, 100);
  MarkovSpec ms{[](const Vec& x) { return Vec(Vec::Zero(x.size())); }, [](const Vec&) { return Mat(Mat::Identity(1, 1)); },
                [](const Vec& x) { return Vec(x.array().square().matrix()); }, nullptr, nullptr};
  const auto u = feynman_kac(ms, 0.25, Vec::Constant(1, 0.5), b);
  EXPECT_LT(std::abs(u.mean - oracle::heat_second_moment(0.5, 0.25, 1.0)), 5 * u.stderr_);
  EXPECT_THROW(feynman_kac(ms, 0.0, Vec::Constant(1, 0.5), b), std::domain_error);
}

TEST(FeynmanKac, LinearNoiseMatchesOraclePerBPath) {
  const double c = 0.4;
  const auto b = sample_bundle(make_grid(0, 1, 256), 1, 1, 64, 15, 16);
  MarkovSpec ms{[](const Vec& x) { return Vec(Vec::Zero(x.size())); }, [](const Vec&) { return Mat(Mat::Identity(1, 1)); },
                [](const Vec&) { return Vec(Vec::Constant(1, 2.0)); }, nullptr,
                [c](double, const Vec&, const Vec& y, const Mat&) { return Mat(c * y); }};
  const auto u = feynman_kac(ms, 0.0, Vec::Zero(1), b);
  const auto exact = solve_linear_exact(0.0, c, Vec::Constant(1, 2.0), b);
  for (std::size_t g = 0; g < b.n_groups(); ++g)
    EXPECT_NEAR(u.per_group[g], exact.Y.at(g * 16, 0, 0), 0.15 * exact.Y.at(g * 16, 0, 0));
}
