#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "hypokernel/kernels.hpp"

using namespace hypokernel;
using kernels::DiffusionMatrix;
using kernels::FrozenGaussian;
using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::VectorXd;

namespace {

std::unique_ptr<fields::VectorFieldSet> const_model(const MatrixXd& sigma) {
  std::ostringstream def;
  def.precision(17);
  def << "dim " << sigma.rows() << "\nfields " << sigma.cols() << "\n";
  for (int c = 0; c < sigma.cols(); ++c)
    for (int r = 0; r < sigma.rows(); ++r) {
      def << "term " << (c + 1) << " " << r << " " << sigma(r, c);
      for (int e = 0; e < sigma.rows(); ++e) def << " 0";
      def << "\n";
    }
  std::istringstream in(def.str());
  return models::parse_custom_model(in);
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double fa,
                        double fm, double fb, double whole, double eps, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * eps)
    return left + right + (left + right - whole) / 15.0;
  return adaptive_simpson(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b, double eps) {
  const double m = 0.5 * (a + b);
  const double fa = f(a), fm = f(m), fb = f(b);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson(f, a, b, fa, fm, fb, whole, eps, 40);
}

}  // namespace

TEST_CASE("diffusion assembly examples") {
  MatrixXd col(2, 1);
  col << 0.0, std::sqrt(2.0 * 0.9);
  auto vf = const_model(col);
  DiffusionMatrix dm(*vf);
  MatrixXd a = dm.a(Vector2d(0.4, -1.0));
  CHECK(a(0, 0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(a(1, 1) == doctest::Approx(1.8));
  CHECK(a(0, 1) == 0.0);

  auto gru = models::make_model("grushin");
  MatrixXd ag = DiffusionMatrix(*gru).a(Vector2d(3.0, 0.2));
  CHECK(ag(0, 0) == 1.0);
  CHECK(ag(1, 1) == 9.0);

  MatrixXd scaled = 0.7 * MatrixXd::Identity(2, 2);
  auto iso = const_model(scaled);
  MatrixXd ai = DiffusionMatrix(*iso).a(Vector2d(1.0, 1.0));
  CHECK((ai - 0.49 * MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("eigendecomposition of [[2,1],[1,2]] gives 3 and 1") {
  // Cholesky factor of [[2,1],[1,2]]: columns (sqrt2, 1/sqrt2), (0, sqrt(3/2)).
  MatrixXd sigma(2, 2);
  sigma << std::sqrt(2.0), 0.0, 1.0 / std::sqrt(2.0), std::sqrt(1.5);
  auto vf = const_model(sigma);
  DiffusionMatrix dm(*vf);
  Vector2d x(0.0, 0.0);
  MatrixXd a = dm.a(x);
  CHECK((a - (MatrixXd(2, 2) << 2, 1, 1, 2).finished()).cwiseAbs().maxCoeff() <= 1e-14);
  auto e = dm.eigen(x);
  CHECK(e.lambda[0] == doctest::Approx(3.0).epsilon(1e-13));
  CHECK(e.lambda[1] == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("rank-one diffusion has eigenvalues (norm squared, 0, 0)") {
  MatrixXd v(3, 1);
  v << 1.0, 2.0, 2.0;
  auto vf = const_model(v);
  auto e = DiffusionMatrix(*vf).eigen(Eigen::Vector3d::Zero());
  CHECK(e.lambda[0] == doctest::Approx(9.0).epsilon(1e-13));
  CHECK(e.lambda[1] == 0.0);
  CHECK(e.lambda[2] == 0.0);
}

TEST_CASE("eigen structure invariants across models and points") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (const char* name : {"kolmogorov", "grushin", "elliptic_ou"}) {
    auto vf = models::make_model(name);
    DiffusionMatrix dm(*vf);
    for (int k = 0; k < 20; ++k) {
      Vector2d x(u(rng), u(rng));
      MatrixXd a = dm.a(x);
      auto e = dm.eigen(x);
      for (int i = 0; i + 1 < 2; ++i) CHECK(e.lambda[i] >= e.lambda[i + 1]);
      CHECK(e.lambda.minCoeff() >= 0.0);
      CHECK((e.d * e.d.transpose() - MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-10);
      MatrixXd rec = e.d.transpose() * e.lambda.asDiagonal() * e.d;
      CHECK((rec - a).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + a.cwiseAbs().maxCoeff()));
    }
  }
}

TEST_CASE("degeneracy probe fractions") {
  models::Box box{{-1.0, -1.0}, {1.0, 1.0}};
  auto ell = models::make_model("elliptic_ou");
  auto re = kernels::degeneracy_probe(DiffusionMatrix(*ell), box, 500);
  for (double f : re.fraction) CHECK(f == 0.0);

  auto kol = models::make_model("kolmogorov");
  auto rk = kernels::degeneracy_probe(DiffusionMatrix(*kol), box, 500);
  for (double f : rk.fraction) CHECK(f == 1.0);

  // Grushin: min lambda = x1^2, so fraction(eps) ~ sqrt(eps) and -> 0.
  auto gru = models::make_model("grushin");
  auto rg = kernels::degeneracy_probe(DiffusionMatrix(*gru), box, 4000,
                                      {1e-2, 1e-4, 1e-6, 1e-8});
  CHECK(std::abs(rg.fraction[0] - 0.1) <= 0.02);
  CHECK(std::abs(rg.fraction[1] - 0.01) <= 0.005);
  for (std::size_t i = 1; i < rg.fraction.size(); ++i)
    CHECK(rg.fraction[i] <= rg.fraction[i - 1]);
  CHECK(rg.fraction.back() <= 1e-3);
}

TEST_CASE("one-dimensional closed form") {
  const double lam = 0.7, y0 = 0.3, s = 0.15, t = 0.4;
  MatrixXd sig(1, 1);
  sig << std::sqrt(lam);
  auto vf = const_model(sig);
  DiffusionMatrix dm(*vf);
  VectorXd y(1);
  y << y0;
  FrozenGaussian fg(dm, y);
  const double tau = t - s;
  for (double x0 : {-0.8, 0.3, 0.31, 1.9}) {
    VectorXd x(1);
    x << x0;
    const double ref = std::exp(-(x0 - y0) * (x0 - y0) / (4.0 * lam * tau)) /
                       std::sqrt(4.0 * M_PI * lam * tau);
    CHECK(fg.value(t, x, s) == doctest::Approx(ref).epsilon(1e-12));
  }
  CHECK_THROWS_AS((void)fg.value(s, y, s), std::invalid_argument);
}

TEST_CASE("unit mass against an adaptive quadrature oracle") {
  MatrixXd sig(1, 1);
  sig << 1.0;
  auto vf = const_model(sig);
  FrozenGaussian fg(DiffusionMatrix(*vf), VectorXd::Zero(1));
  const double t = 0.5;
  const double r = fg.truncation_radius(t);
  CHECK(r == doctest::Approx(6.0));
  auto f = [&](double x0) {
    VectorXd x(1);
    x << x0;
    return fg.value(t, x, 0.0);
  };
  const double mass = integrate(f, -r, r, 1e-12);
  CHECK(std::abs(mass - 1.0) <= 1e-6);
}

TEST_CASE("unit mass on a truncated tensor grid in 2d") {
  auto vf = models::make_model("elliptic_ou", {{"s1", 1.0}, {"s2", 0.5}});
  DiffusionMatrix dm(*vf);
  Vector2d y(0.2, -0.4);
  FrozenGaussian fg(dm, y);
  const double t = 0.3;
  const double r = fg.truncation_radius(t);
  grid::TensorGrid g({grid::Axis{y[0] - r, y[0] + r, 161}, grid::Axis{y[1] - r, y[1] + r, 161}});
  const auto& w = g.weights();
  double mass = 0.0;
  Vector2d x;
  for (std::size_t k = 0; k < g.size(); ++k) {
    g.node(k, x.data());
    mass += w[k] * fg.value(t, x, 0.0);
  }
  CHECK(mass >= 1.0 - 1e-4);
  CHECK(mass <= 1.0 + 1e-6);
}

TEST_CASE("degenerate freeze points evaluate to zero") {
  auto kol = models::make_model("kolmogorov", {{"lambda2", 0.9}, {"mu1", 1.3}});
  DiffusionMatrix dm(*kol);
  FrozenGaussian fg(dm, Vector2d(0.0, 1.0));
  CHECK(fg.degenerate());
  CHECK(fg.lambda()[0] == doctest::Approx(0.9));
  CHECK(fg.degenerate_flags() == std::vector<bool>{false, true});
  CHECK(fg.value(0.5, Vector2d(0.0, 1.0), 0.0) == 0.0);
  CHECK(fg.value(0.5, Vector2d(0.7, -0.2), 0.0) == 0.0);

  auto gru = models::make_model("grushin");
  DiffusionMatrix dg(*gru);
  CHECK(FrozenGaussian(dg, Vector2d(0.0, 0.5)).degenerate());
  CHECK_FALSE(FrozenGaussian(dg, Vector2d(1.0, 0.5)).degenerate());
}

TEST_CASE("frozen gaussian solves the frozen heat equation") {
  MatrixXd sigma(2, 2);
  sigma << std::sqrt(2.0), 0.0, 1.0 / std::sqrt(2.0), std::sqrt(1.5);
  auto vf = const_model(sigma);
  DiffusionMatrix dm(*vf);
  Vector2d y(0.1, -0.3);
  FrozenGaussian fg(dm, y);
  MatrixXd a = dm.a(y);
  const double t = 0.5;
  const double peak = fg.value(t, y, 0.0);
  const double sig_len = std::sqrt(2.0 * fg.lambda_max() * t);

  auto residual = [&](const Vector2d& x, double h) {
    const double ht = 1e-3 * t;
    double r = (fg.value(t + ht, x, 0.0) - fg.value(t - ht, x, 0.0)) / (2.0 * ht);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        Vector2d ei = Vector2d::Zero(), ej = Vector2d::Zero();
        ei[i] = h;
        ej[j] = h;
        const double d2 =
            (fg.value(t, x + ei + ej, 0.0) - fg.value(t, x + ei - ej, 0.0) -
             fg.value(t, x - ei + ej, 0.0) + fg.value(t, x - ei - ej, 0.0)) /
            (4.0 * h * h);
        r -= a(i, j) * d2;
      }
    return std::abs(r);
  };

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int k = 0; k < 12; ++k) {
    Vector2d x = y + Vector2d(u(rng), u(rng)) * sig_len;
    const double h = 1e-3 * sig_len;
    CHECK(residual(x, h) <= 1e-4 * peak);
    CHECK(residual(x, 0.5 * h) <= 1e-4 * peak);  // Richardson-style halving
  }
}

TEST_CASE("analytic derivatives match finite differences") {
  MatrixXd sigma(2, 2);
  sigma << 1.0, 0.0, 0.3, 0.8;
  auto vf = const_model(sigma);
  DiffusionMatrix dm(*vf);
  Vector2d y(0.0, 0.0);
  FrozenGaussian fg(dm, y);
  const double t = 0.4, h = 1e-5;
  const double scale = fg.value(t, y, 0.0);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 10; ++k) {
    Vector2d x(u(rng), u(rng));
    VectorXd g = fg.grad_x(t, x, 0.0);
    MatrixXd hess = fg.hess_x(t, x, 0.0);
    for (int i = 0; i < 2; ++i) {
      Vector2d ei = Vector2d::Zero();
      ei[i] = h;
      const double fd = (fg.value(t, x + ei, 0.0) - fg.value(t, x - ei, 0.0)) / (2.0 * h);
      CHECK(std::abs(fd - g[i]) <= 1e-6 * scale);
      for (int j = 0; j < 2; ++j) {
        Vector2d ej = Vector2d::Zero();
        ej[j] = h;
        const double fd2 =
            (fg.value(t, x + ei + ej, 0.0) - fg.value(t, x + ei - ej, 0.0) -
             fg.value(t, x - ei + ej, 0.0) + fg.value(t, x - ei - ej, 0.0)) /
            (4.0 * h * h);
        CHECK(std::abs(fd2 - hess(i, j)) <= 1e-4 * scale);
      }
    }
    const double ht = 1e-6;
    const double fdt = (fg.value(t + ht, x, 0.0) - fg.value(t - ht, x, 0.0)) / (2.0 * ht);
    CHECK(std::abs(fdt - fg.dt(t, x, 0.0)) <= 1e-5 * scale);
  }
}

TEST_CASE("chapman-kolmogorov for constant coefficients") {
  const double lam = 0.7, s = 0.2, t = 0.5;
  MatrixXd sig(1, 1);
  sig << std::sqrt(lam);
  auto vf = const_model(sig);
  DiffusionMatrix dm(*vf);
  VectorXd y = VectorXd::Zero(1);
  FrozenGaussian fg(dm, y);
  const double r = fg.truncation_radius(t);
  grid::TensorGrid zg({grid::Axis{-r, r, 801}});
  const auto& w = zg.weights();
  for (double x0 : {-0.5, 0.0, 0.4}) {
    VectorXd x(1), z(1);
    x << x0;
    double conv = 0.0;
    for (std::size_t k = 0; k < zg.size(); ++k) {
      zg.node(k, z.data());
      FrozenGaussian fz(dm, z);
      conv += w[k] * fz.value(t, x, s) * fg.value(s, z, 0.0);
    }
    const double ref = fg.value(t, x, 0.0);
    CHECK(std::abs(conv - ref) <= 1e-4 * ref);
  }
}

TEST_CASE("rotational covariance for constant coefficients") {
  const double th = 0.6, c = std::cos(th), sn = std::sin(th);
  MatrixXd o(2, 2);
  o << c, -sn, sn, c;
  MatrixXd s0(2, 2);
  s0 << 1.0, 0.0, 0.0, 0.5;
  auto base = const_model(s0);
  auto rot = const_model(o * s0);
  Vector2d y(0.3, -0.1);
  FrozenGaussian fa(DiffusionMatrix(*base), y);
  FrozenGaussian fb(DiffusionMatrix(*rot), y);
  const double t = 0.4;
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 20; ++k) {
    Vector2d z(u(rng), u(rng));
    const double va = fa.value(t, y + z, 0.0);
    const double vb = fb.value(t, y + o * z, 0.0);
    CHECK(std::abs(va - vb) <= 1e-10 * (std::abs(va) + 1e-300));
  }
}

TEST_CASE("value depends only on x - y for constant coefficients") {
  MatrixXd sig(2, 2);
  sig << 1.0, 0.0, 0.25, 0.75;
  auto vf = const_model(sig);
  DiffusionMatrix dm(*vf);
  Vector2d y(0.25, -0.5), x(1.0, 0.75), delta(0.5, 2.25);
  FrozenGaussian f1(dm, y);
  FrozenGaussian f2(dm, y + delta);
  CHECK(f1.value(0.3, x, 0.0) == f2.value(0.3, x + delta, 0.0));
}

TEST_CASE("partially frozen leading operator") {
  auto kol = models::make_model("kolmogorov", {{"lambda2", 0.9}, {"mu1", 1.3}});
  DiffusionMatrix dm(*kol);
  auto pf = kernels::partial_frozen_leading(dm, *kol, Vector2d(0.0, 1.0));
  CHECK(pf.frozen == std::vector<int>{1});
  CHECK(pf.frozen_lambda[0] == doctest::Approx(0.9));
  CHECK(pf.residual == std::vector<int>{0});
  CHECK(pf.witness == std::vector<int>{1});

  // Explicitly chosen frozen set behaves the same; a degenerate choice throws.
  auto same = kernels::partial_frozen_leading(dm, *kol, Vector2d(0.0, 1.0), {1});
  CHECK(same.residual == pf.residual);
  CHECK_THROWS_AS(
      (void)kernels::partial_frozen_leading(dm, *kol, Vector2d(0.0, 1.0), {0}),
      std::runtime_error);

  // At the origin the drift vanishes: no witness.
  CHECK_THROWS_WITH_AS(
      (void)kernels::partial_frozen_leading(dm, *kol, Vector2d(0.0, 0.0)),
      doctest::Contains("witness"), std::runtime_error);

  auto ell = models::make_model("elliptic_ou");
  DiffusionMatrix de(*ell);
  auto pe = kernels::partial_frozen_leading(de, *ell, Vector2d(0.4, 0.4));
  CHECK(pe.frozen == std::vector<int>{0, 1});
  CHECK(pe.residual.empty());
}
