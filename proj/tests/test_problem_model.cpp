#include "bdsde/problem_model.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace bdsde;

namespace {

GeneratorSpec scalar_spec(DriftFn f, NoiseFn g, double mu, double lambda = 1.0, double alpha = 0.5) {
  GeneratorSpec s;
  s.name = "test";
  s.f = std::move(f);
  s.g = std::move(g);
  s.xi = [](const TerminalData&) { return Vec(Vec::Ones(1)); };
  s.mu = mu;
  s.lambda = lambda;
  s.alpha = alpha;
  return s;
}

NoiseFn zero_noise() {
  return [](double, const Vec& y, const Mat&) { return Mat(Mat::Zero(y.size(), 1)); };
}

}  // namespace

TEST(Baselines, CatalogEntries) {
  CatalogParams lp{{{"theta", 0.0}}};
  const auto lin = catalog("linear_pricing", lp);
  EXPECT_EQ(f_zero(lin, 0.3).norm(), 0.0);
  EXPECT_EQ(g_zero(lin, 0.3).norm(), 0.0);
  const auto cub = catalog("monotone_cubic", CatalogParams{{{"h", 0.7}}});
  EXPECT_DOUBLE_EQ(f_zero(cub, 0.4)[0], 0.7 * std::cos(0.4));
  EXPECT_EQ(g_zero(cub, 0.4).norm(), 0.0);
  EXPECT_EQ(g_zero(catalog("lipschitz_smooth"), 0.9).norm(), 0.0);
}

TEST(StructureChecks, LinearDecay) {
  const auto s = scalar_spec([](double, const Vec& y, const Mat&) { return Vec(-y); }, zero_noise(), -1.0);
  const auto rep = check_structure(s, 20000, 1);
  EXPECT_TRUE(rep.all_pass());
  auto bad = s;
  bad.mu = -1.5;
  EXPECT_FALSE(check_structure(bad, 20000, 1)["monotone_y"].pass);
}

TEST(StructureChecks, CubicIsMonotoneButNotLipschitz) {
  const auto s = scalar_spec([](double, const Vec& y, const Mat&) { return Vec(-y.array().cube().matrix()); },
                             zero_noise(), 0.0);
  EXPECT_TRUE(check_structure(s, 20000, 2)["monotone_y"].pass);
  EXPECT_FALSE(check_lipschitz_y(s, 3.0, 20000, 2).all_pass());
  // (y1 - y2)(y1^3 - y2^3) >= 0 at a hand-picked pair
  Vec a(1), b(1);
  a << 10;
  b << 11;
  const double slope = std::abs((s.f(0, a, Mat::Zero(1, 1)) - s.f(0, b, Mat::Zero(1, 1)))[0]);
  EXPECT_GT(slope, 300.0);
}

TEST(StructureChecks, NoiseContractionInZ) {
  const double alpha = 0.4;
  auto s = scalar_spec([](double, const Vec&, const Mat&) { return Vec(Vec::Zero(1)); },
                       [alpha](double, const Vec&, const Mat& z) { return Mat(std::sqrt(alpha) * z); }, 0.0, 1.0,
                       alpha);
  const auto rep = check_structure(s, 20000, 3);
  EXPECT_TRUE(rep["noise_contraction"].pass);
  s.alpha = 0.3;
  EXPECT_FALSE(check_structure(s, 20000, 3)["noise_contraction"].pass);
}

TEST(StructureChecks, ReportCsvAndDeterminism) {
  const auto s = catalog("lipschitz_smooth");
  const auto a = check_assumptions(s, 5000, 9), b = check_assumptions(s, 5000, 9);
  ASSERT_EQ(a.checks.size(), b.checks.size());
  for (std::size_t j = 0; j < a.checks.size(); ++j) EXPECT_EQ(a.checks[j].worst_violation, b.checks[j].worst_violation);
  std::ostringstream os;
  write_assumption_csv(os, a);
  EXPECT_NE(os.str().find("noise_contraction,pass"), std::string::npos);
  EXPECT_NE(os.str().find("growth,pass"), std::string::npos);
  EXPECT_THROW(check_structure(s, 0, 1), std::domain_error);
}

TEST(Catalog, EveryEntryPassesItsDeclaredConstants) {
  for (const auto& name : catalog_names()) {
    for (int d : {1, 2}) {
      CatalogParams params{{{"d", static_cast<double>(d)}}};
      if (name == "linear_pricing") params.values["theta"] = 0.2;
      const auto s = catalog(name, params);
      const auto rep = check_assumptions(s, 100000, 77);
      for (const auto& c : rep.checks) EXPECT_TRUE(c.pass) << name << " d=" << d << " " << c.name << " " << c.worst_violation;
    }
  }
}

TEST(Catalog, UnknownNamesAndParameters) {
  EXPECT_THROW(catalog("nope"), std::domain_error);
  EXPECT_THROW(catalog("linear_pricing", CatalogParams{{{"bogus", 1.0}}}), std::domain_error);
  CatalogParams bad_mode;
  bad_mode.xi_mode = "weird";
  EXPECT_THROW(catalog("linear_pricing", bad_mode), std::domain_error);
}

TEST(Catalog, HeavyTerminalTail) {
  CatalogParams params;
  params.xi_mode = "heavy";
  const auto s = catalog("lipschitz_smooth", params);
  // P(|xi| > s) = (1 + s)^{-1.75} when x_T is standard normal
  PhiloxStream rng(4, 0);
  const int n = 200000;
  int above = 0;
  for (int k = 0; k < n; ++k) {
    TerminalData td;
    td.x_T = Vec::Constant(1, rng.normal());
    above += std::abs(s.xi(td)[0]) > 3.0;
  }
  const double want = std::pow(4.0, -oracle::kHeavyTailIndex);
  EXPECT_NEAR(static_cast<double>(above) / n, want, 5 * std::sqrt(want / n));
}

TEST(Truncation, QnBasics) {
  Vec z(2);
  z << 3, 4;
  const Vec q = q_n(z, 1.0);
  EXPECT_DOUBLE_EQ(q[0], oracle::kQ1of34[0]);
  EXPECT_DOUBLE_EQ(q[1], oracle::kQ1of34[1]);
  EXPECT_EQ(q_n(z, 5.0), z);
  EXPECT_THROW(q_n(z, 0.0), std::domain_error);
}

TEST(Truncation, QnRandomizedProperties) {
  PhiloxStream rng(5, 0);
  for (int t = 0; t < 200000; ++t) {
    Mat a(2, 2), b(2, 2);
    for (int j = 0; j < 4; ++j) a(j % 2, j / 2) = 3 * rng.normal() * std::exp(rng.normal());
    for (int j = 0; j < 4; ++j) b(j % 2, j / 2) = 3 * rng.normal() * std::exp(rng.normal());
    const double n = 0.5 + 4 * rng.uniform();
    const Mat qa = q_n(a, n), qb = q_n(b, n);
    ASSERT_LE(qa.norm(), n * (1 + 1e-15));
    ASSERT_LE((qa - qb).norm(), (a - b).norm() * (1 + 1e-12) + 1e-15);
    if (a.norm() <= n) {
      ASSERT_EQ(q_n(a, n + 2.0), qa);
    }
  }
}

TEST(Truncation, ThetaPlateausAndSmoothness) {
  const double r = 2.0;
  auto at = [&](double radius) {
    Vec y(2);
    y << radius * 0.8, radius * 0.6;
    return theta_r(y, r);
  };
  EXPECT_EQ(at(r / 2), 1.0);
  EXPECT_EQ(at(r + 2), 0.0);
  EXPECT_NEAR(at(r + 0.5), oracle::kThetaMid, 1e-15);
  const double h = 1e-6;
  for (double edge : {r, r + 1.0}) {
    EXPECT_NEAR(at(edge - h), at(edge + h), 1e-5);
    const double left = (at(edge) - at(edge - h)) / h, right = (at(edge + h) - at(edge)) / h;
    EXPECT_NEAR(left, right, 1e-4);
  }
  for (double x = 0; x < 5; x += 0.01) {
    EXPECT_GE(at(x), 0.0);
    EXPECT_LE(at(x), 1.0);
  }
}

TEST(Truncation, PsiR) {
  const auto flat = scalar_spec([](double t, const Vec&, const Mat&) { return Vec(Vec::Constant(1, t)); },
                                zero_noise(), 0.0);
  EXPECT_EQ(psi_r(flat, 0.5, 3.0), 0.0);
  const auto lin = scalar_spec([](double, const Vec& y, const Mat&) { return Vec(-y); }, zero_noise(), -1.0);
  const double v = psi_r(lin, 0.0, 2.0);
  EXPECT_LT(v, 2.0);
  EXPECT_GT(v, 1.9);
  const auto cub = catalog("monotone_cubic");
  double prev = 0.0;
  for (double r : {0.1, 0.3, 0.7, 1.0, 1.5, 2.0, 3.7, 8.0}) {
    const double now = psi_r(cub, 0.2, r);
    EXPECT_GE(now, prev);
    prev = now;
  }
}

TEST(TruncatedGenerator, GeneratorProperties) {
  const auto spec = catalog("monotone_cubic", CatalogParams{{{"h", 0.2}, {"xi", 0.1}, {"lambda", 0.5}}});
  // bound exp((1 + lambda^2) T)(|xi| + T |f0|) = e^{1.25} * 0.3 ~ 1.05
  const double r = 2.0, n = 3.0;
  const auto h = truncated_generator(spec, r, n);
  for (double t : {0.0, 0.3, 1.0}) {
    EXPECT_DOUBLE_EQ((h.f(t, Vec::Zero(1), Mat::Zero(1, 1)) - f_zero(spec, t)).norm(), 0.0);
    Vec far(1);
    far << r + 1.5;
    EXPECT_EQ(h.f(t, far, Mat::Ones(1, 1) * 7.0), f_zero(spec, t));
  }
  EXPECT_TRUE(check_structure(h, 50000, 3).all_pass());
  EXPECT_TRUE(check_lipschitz_y(h, h.mu, 50000, 3).all_pass());
  EXPECT_THROW(truncated_generator(spec, 0.5, n), std::domain_error);
}

TEST(TruncatedGenerator, InactiveTruncationLeavesGeneratorUnchanged) {
  const auto spec = catalog("lipschitz_smooth", CatalogParams{{{"lambda", 0.2}}});
  // r large enough that all truncations are inactive on |y| <= 1, |z| <= 1
  auto bounded = spec;
  bounded.xi_bound = 0.1;
  bounded.f0_bound = 0.1;
  const auto h = truncated_generator(bounded, 5.0, 100.0);
  PhiloxStream rng(3, 3);
  for (int t = 0; t < 1000; ++t) {
    Vec y(1);
    Mat z(1, 1);
    y << 2 * rng.uniform() - 1;
    z << 2 * rng.uniform() - 1;
    const double s = rng.uniform();
    EXPECT_NEAR((h.f(s, y, z) - spec.f(s, y, z)).norm(), 0.0, 1e-14);
  }
}

TEST(TruncatedData, DataTruncation) {
  CatalogParams params{{{"h", 3.0}, {"xi", 0.5}}};
  const auto spec = catalog("monotone_cubic", params);
  const auto s2 = truncated_data(spec, 1.0);
  TerminalData td;
  td.x_T = Vec::Zero(1);
  EXPECT_EQ(s2.xi(td), spec.xi(td));
  Vec y(1);
  y << 0.7;
  Mat z(1, 1);
  z << -0.3;
  for (double t : {0.0, 0.5, 1.0}) {
    const Vec shift = s2.f(t, y, z) - spec.f(t, y, z);
    const Vec want = q_n(f_zero(spec, t), 1.0) - f_zero(spec, t);
    EXPECT_NEAR((shift - want).norm(), 0.0, 1e-14);
    EXPECT_LE(f_zero(s2, t).norm(), 1.0 + 1e-15);
  }
  const auto rep = check_structure(s2, 50000, 4);
  EXPECT_TRUE(rep.all_pass());
  EXPECT_THROW(truncated_data(spec, 0.5), std::domain_error);
}

TEST(TruncatedData, NestedTruncationsShrink) {
  CatalogParams params;
  params.xi_mode = "heavy";
  const auto spec = catalog("lipschitz_smooth", params);
  PhiloxStream rng(6, 0);
  std::vector<double> xs(20000);
  for (double& x : xs) {
    TerminalData td;
    td.x_T = Vec::Constant(1, rng.normal());
    x = spec.xi(td)[0];
  }
  for (double i : {1.0, 4.0}) {
    double prev = INFINITY;
    for (double n : {1.0, 2.0, 4.0, 8.0, 16.0}) {
      double m = 0.0;
      for (double x : xs) {
        const Vec v = Vec::Constant(1, x);
        m += (q_n(v, n + i) - q_n(v, n)).norm();
      }
      EXPECT_LE(m, prev);
      prev = m;
    }
  }
}

TEST(Scaling, DataScaleKeepsConstants) {
  const auto spec = catalog("lipschitz_smooth");
  const auto s = scale_data(spec, 4.0);
  EXPECT_NEAR((f_zero(s, 0.3) - 4.0 * f_zero(spec, 0.3)).norm(), 0.0, 1e-14);
  EXPECT_TRUE(check_structure(s, 20000, 5).all_pass());
}
