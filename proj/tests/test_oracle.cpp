#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdlib>

#include "hypokernel/models.hpp"
#include "hypokernel/oracle.hpp"

using namespace hypokernel;
using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::VectorXd;

TEST_CASE("philox4x32-10 reference vectors") {
  auto zeros = oracle::philox4x32_10({0, 0, 0, 0}, {0, 0});
  CHECK(zeros == std::array<std::uint32_t, 4>{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  auto ones = oracle::philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                    {0xffffffffu, 0xffffffffu});
  CHECK(ones == std::array<std::uint32_t, 4>{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  auto pi = oracle::philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                  {0xa4093822u, 0x299f31d0u});
  CHECK(pi == std::array<std::uint32_t, 4>{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("normal pairs are reproducible standard normals") {
  auto a = oracle::normal_pair(42, 7, 3, 0);
  auto b = oracle::normal_pair(42, 7, 3, 0);
  CHECK(a == b);
  CHECK(a != oracle::normal_pair(42, 7, 4, 0));
  CHECK(a != oracle::normal_pair(43, 7, 3, 0));

  const int n = 100000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n / 2; ++i) {
    auto z = oracle::normal_pair(1, static_cast<std::uint64_t>(i), 0, 0);
    sum += z[0] + z[1];
    sq += z[0] * z[0] + z[1] * z[1];
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) <= 3.0 / std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(var - 1.0) <= 3.0 * std::sqrt(2.0 / n));
}

TEST_CASE("zero generators keep every path at the start point") {
  auto vf = models::make_model("zero");
  oracle::SdeSpec spec{vf.get(), Vector2d(0.7, -0.3), 1.0, 10, 50, 9};
  auto s = oracle::euler_maruyama(spec);
  CHECK(s.kept() == 50);
  CHECK(s.excluded == 0);
  for (int p = 0; p < 50; ++p) {
    CHECK(s.points(p, 0) == 0.7);
    CHECK(s.points(p, 1) == -0.3);
  }
}

TEST_CASE("pure brownian covariance is 2It and runs are worker-independent") {
  std::istringstream def("dim 2\nfields 2\nterm 1 0 1 0 0\nterm 2 1 1 0 0\n");
  auto vf = models::parse_custom_model(def);
  oracle::SdeSpec spec{vf.get(), Vector2d::Zero(), 1.0, 16, 100000, 4};
  auto s = oracle::euler_maruyama(spec);
  auto m = oracle::moments(s);
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(m.mean[i]) <= 3.0 * m.mean_se[i]);
    for (int j = 0; j < 2; ++j) {
      const double expected = i == j ? 2.0 : 0.0;
      CHECK(std::abs(m.cov(i, j) - expected) <= 3.0 * m.cov_se(i, j));
    }
  }

  setenv("HYPOKERNEL_WORKERS", "3", 1);
  auto s3 = oracle::euler_maruyama(spec);
  setenv("HYPOKERNEL_WORKERS", "1", 1);
  auto s1 = oracle::euler_maruyama(spec);
  unsetenv("HYPOKERNEL_WORKERS");
  CHECK(s1.points == s3.points);
  CHECK(s1.points == s.points);
}

TEST_CASE("blown-up paths are excluded and counted") {
  std::istringstream def("dim 1\nfields 1\nterm 0 0 1e155 1\n");
  auto vf = models::parse_custom_model(def);
  VectorXd x0(1);
  x0 << 1.0;
  oracle::SdeSpec spec{vf.get(), x0, 1.0, 10, 20, 3};
  auto s = oracle::euler_maruyama(spec);
  CHECK(s.excluded == 20);
  CHECK(s.kept() == 0);
}

TEST_CASE("exact linear kernel closed forms") {
  const double lam2 = 0.9, mu1 = 1.3, t = 0.5;
  MatrixXd b(2, 2), a(2, 2);
  b << 0, mu1, 0, 0;
  a << 0, 0, 0, lam2;
  Vector2d x0(0.5, 0.3);
  auto k = oracle::exact_linear_kernel(b, a, t, x0);

  CHECK(k.mean[0] == doctest::Approx(x0[0] + mu1 * t * x0[1]).epsilon(1e-13));
  CHECK(k.mean[1] == doctest::Approx(x0[1]).epsilon(1e-13));
  CHECK(k.q(1, 1) == doctest::Approx(2.0 * lam2 * t).epsilon(1e-12));
  CHECK(k.q(0, 1) == doctest::Approx(mu1 * lam2 * t * t).epsilon(1e-12));
  CHECK(k.q(0, 0) == doctest::Approx((2.0 / 3.0) * mu1 * mu1 * lam2 * t * t * t).epsilon(1e-12));
  CHECK(k.det_q() ==
        doctest::Approx(mu1 * mu1 * lam2 * lam2 * std::pow(t, 4) / 3.0).epsilon(1e-12));
  CHECK((k.q - k.q.transpose()).cwiseAbs().maxCoeff() == 0.0);

  for (double tt : {1e-3, 1e-2, 0.1, 1.0}) {
    auto kt = oracle::exact_linear_kernel(b, a, tt, x0);
    CHECK(kt.det_q() > 0.0);
  }
  auto tiny = oracle::exact_linear_kernel(b, a, 1e-9, x0);
  CHECK(tiny.q.cwiseAbs().maxCoeff() <= 1e-8);

  MatrixXd b0 = MatrixXd::Zero(2, 2), ai = 0.4 * MatrixXd::Identity(2, 2);
  auto iso = oracle::exact_linear_kernel(b0, ai, 0.7, x0);
  CHECK((iso.mean - x0).cwiseAbs().maxCoeff() == 0.0);
  CHECK((iso.q - 2.0 * 0.4 * 0.7 * MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("discrete euler-maruyama moments match the hand recursion") {
  const double lam2 = 0.9, mu1 = 1.3, t = 0.5;
  const int steps = 200;
  MatrixXd b(2, 2), a(2, 2);
  b << 0, mu1, 0, 0;
  a << 0, 0, 0, lam2;
  Vector2d x0(0.5, 0.3);
  auto d = oracle::discrete_linear_moments(b, a, t, steps, x0);
  const double n = steps;
  CHECK(d.q(1, 1) == doctest::Approx(2.0 * lam2 * t).epsilon(1e-12));
  CHECK(d.q(0, 1) == doctest::Approx(mu1 * lam2 * t * t * (1.0 - 1.0 / n)).epsilon(1e-12));
  CHECK(d.q(0, 0) == doctest::Approx((2.0 / 3.0) * mu1 * mu1 * lam2 * t * t * t *
                                     (1.0 - 1.0 / n) * (1.0 - 0.5 / n))
                         .epsilon(1e-12));
  // Nilpotent drift: the chain mean is exact.
  CHECK(d.mean[0] == doctest::Approx(x0[0] + mu1 * t * x0[1]).epsilon(1e-14));
}

TEST_CASE("extract_linear_model accepts kolmogorov and rejects grushin") {
  auto kol = models::make_model("kolmogorov", {{"lambda2", 0.9}, {"mu1", 1.3}});
  auto lm = oracle::extract_linear_model(*kol);
  CHECK(lm.b(0, 1) == doctest::Approx(-1.3));
  CHECK(lm.a(1, 1) == doctest::Approx(0.9));
  CHECK(lm.a(0, 0) == 0.0);

  auto gru = models::make_model("grushin");
  CHECK_THROWS_AS((void)oracle::extract_linear_model(*gru), std::runtime_error);
}

TEST_CASE("euler-maruyama cross-validates the exact kernel") {
  auto kol = models::make_model("kolmogorov", {{"lambda2", 0.9}, {"mu1", 1.3}});
  auto lm = oracle::extract_linear_model(*kol);
  Vector2d x0(0.5, 0.3);
  const double t = 0.5;
  const int steps = 400;
  oracle::SdeSpec spec{kol.get(), x0, t, steps, 50000, 2024};
  auto s = oracle::euler_maruyama(spec);
  CHECK(s.excluded == 0);
  auto m = oracle::moments(s);
  auto exact = oracle::exact_linear_kernel(lm.b, lm.a, t, x0);
  auto disc = oracle::discrete_linear_moments(lm.b, lm.a, t, steps, x0);
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(m.mean[i] - exact.mean[i]) <= 3.0 * m.mean_se[i]);
    for (int j = 0; j < 2; ++j) {
      const double allowance = std::abs(disc.q(i, j) - exact.q(i, j));
      CHECK(std::abs(m.cov(i, j) - exact.q(i, j)) <= 3.0 * m.cov_se(i, j) + allowance);
    }
  }
}

TEST_CASE("weak-order slope of the moment error is at least 0.8") {
  auto kol = models::make_model("kolmogorov", {{"lambda2", 0.9}, {"mu1", 1.3}});
  auto lm = oracle::extract_linear_model(*kol);
  Vector2d x0(0.5, 0.3);
  const double t = 0.5;
  auto exact = oracle::exact_linear_kernel(lm.b, lm.a, t, x0);
  std::vector<double> hs, errs;
  for (int steps : {10, 20, 40}) {
    oracle::SdeSpec spec{kol.get(), x0, t, steps, 400000, 77};
    auto m = oracle::moments(oracle::euler_maruyama(spec));
    hs.push_back(t / steps);
    errs.push_back((m.cov - exact.q).cwiseAbs().maxCoeff());
  }
  const double slope =
      std::log(errs.front() / errs.back()) / std::log(hs.front() / hs.back());
  CHECK(slope >= 0.8);
}

TEST_CASE("kde of a point mass is a unit peak with floored bandwidth") {
  Eigen::MatrixXd samples = Eigen::MatrixXd::Zero(1200, 1);
  grid::TensorGrid g({grid::Axis{-1.0, 1.0, 201}});
  auto kde = oracle::kde_density(samples, g);
  CHECK(kde.floored);
  CHECK(kde.bandwidth[0] == doctest::Approx(g.axis(0).step()));
  CHECK(kde.density.mass() == doctest::Approx(1.0).epsilon(1e-6));
  std::size_t arg = 0;
  double best = -1.0;
  for (std::size_t k = 0; k < g.size(); ++k)
    if (kde.density.values[k] > best) {
      best = kde.density.values[k];
      arg = k;
    }
  CHECK(g.node_vec(arg)[0] == doctest::Approx(0.0));
}

TEST_CASE("kde of standard normal samples matches the analytic density") {
  const int n = 100000;
  Eigen::MatrixXd samples(n, 1);
  for (int i = 0; i < n / 2; ++i) {
    auto z = oracle::normal_pair(5, static_cast<std::uint64_t>(i), 0, 0);
    samples(2 * i, 0) = z[0];
    samples(2 * i + 1, 0) = z[1];
  }
  grid::TensorGrid g({grid::Axis{-5.0, 5.0, 201}});
  auto kde = oracle::kde_density(samples, g);
  CHECK_FALSE(kde.floored);
  const double peak = 1.0 / std::sqrt(2.0 * M_PI);
  double sup = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    const double x = g.node_vec(k)[0];
    sup = std::max(sup, std::abs(kde.density.values[k] - peak * std::exp(-0.5 * x * x)));
  }
  CHECK(sup <= 0.02 * peak);
  CHECK(kde.density.mass() >= 0.97);
  CHECK(kde.density.mass() <= 1.01);

  setenv("HYPOKERNEL_WORKERS", "4", 1);
  auto again = oracle::kde_density(samples, g);
  unsetenv("HYPOKERNEL_WORKERS");
  CHECK(again.density.values == kde.density.values);
}

TEST_CASE("kolmogorov kde is close to the exact kernel in tv distance") {
  auto kol = models::make_model("kolmogorov", {{"lambda2", 0.9}, {"mu1", 1.3}});
  auto lm = oracle::extract_linear_model(*kol);
  Vector2d x0(0.0, 0.0);
  const double t = 0.5;
  oracle::SdeSpec spec{kol.get(), x0, t, 200, 200000, 11};
  auto s = oracle::euler_maruyama(spec);
  auto exact = oracle::exact_linear_kernel(lm.b, lm.a, t, x0);
  const double r1 = 5.0 * std::sqrt(exact.q(0, 0));
  const double r2 = 5.0 * std::sqrt(exact.q(1, 1));
  grid::TensorGrid g({grid::Axis{exact.mean[0] - r1, exact.mean[0] + r1, 81},
                      grid::Axis{exact.mean[1] - r2, exact.mean[1] + r2, 81}});
  auto kde = oracle::kde_density(s.points, g);
  grid::DensityGrid ref;
  ref.grid = g;
  ref.t = t;
  ref.y = x0;
  ref.method = "exact";
  ref.values.resize(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) ref.values[k] = exact.density(g.node_vec(k));
  kde.density.t = t;
  kde.density.y = x0;
  CHECK(grid::tv_distance(kde.density, ref) <= 0.05);
}

TEST_CASE("delta family checks") {
  MatrixXd b0 = MatrixXd::Zero(1, 1), a(1, 1);
  a << 0.5;
  VectorXd y(1);
  y << 0.2;
  grid::TensorGrid g({grid::Axis{y[0] - 6.0, y[0] + 6.0, 401}});
  std::vector<grid::DensityGrid> family;
  for (double t : {0.4, 0.2, 0.1}) {
    auto k = oracle::exact_linear_kernel(b0, a, t, y);
    grid::DensityGrid dg;
    dg.grid = g;
    dg.t = t;
    dg.y = y;
    dg.method = "exact";
    dg.values.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) dg.values[i] = k.density(g.node_vec(i));
    family.push_back(std::move(dg));
  }

  auto constant = oracle::delta_family_check(family, [](const VectorXd&) { return 1.0; });
  for (double dev : constant.deviation) CHECK(dev <= 1e-6);

  // Centered Gaussian: the first-moment deviation vanishes identically.
  auto first = oracle::delta_family_check(family, [](const VectorXd& x) { return x[0]; });
  for (double dev : first.deviation) CHECK(dev <= 1e-8);

  auto second = oracle::delta_family_check(
      family, [&](const VectorXd& x) { return (x[0] - y[0]) * (x[0] - y[0]); });
  CHECK(second.decreasing);
  REQUIRE(second.t.size() == 3);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(second.deviation[i] == doctest::Approx(2.0 * 0.5 * second.t[i]).epsilon(1e-3));

  grid::TensorGrid other({grid::Axis{-1.0, 1.0, 11}});
  grid::DensityGrid bad;
  bad.grid = other;
  bad.t = 0.05;
  bad.y = y;
  bad.values.assign(other.size(), 0.0);
  auto broken = family;
  broken.push_back(bad);
  CHECK_THROWS_AS(
      (void)oracle::delta_family_check(broken, [](const VectorXd&) { return 1.0; }),
      std::invalid_argument);
}
