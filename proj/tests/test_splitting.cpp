#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "hypokernel/oracle.hpp"
#include "hypokernel/splitting.hpp"

using namespace hypokernel;
using Eigen::Matrix2d;
using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::VectorXd;

namespace {

// Rotation drift (-x2, x1).
const splitting::VecFn kRotation = [](const double* x, double* out) {
  out[0] = -x[1];
  out[1] = x[0];
};

// Non-nilpotent pair V1 = (1, 0), V2 = (0, sin x1) for genuine O(delta)
// square-walk convergence.
class SinPair final : public fields::FieldSetBase<SinPair> {
 public:
  [[nodiscard]] int dim() const override { return 2; }
  [[nodiscard]] int num_diffusion() const override { return 2; }
  [[nodiscard]] std::string name() const override { return "sin_pair"; }

  template <class T>
  void eval_impl(int i, const T* x, T* out) const {
    out[0] = T(0.0);
    out[1] = T(0.0);
    if (i == 1) out[0] = T(1.0);
    if (i == 2) out[1] = sin(x[0]);
  }
};

kernels::PartialFrozenLeading kolmogorov_leading(const fields::VectorFieldSet& vf,
                                                 const Vector2d& y) {
  kernels::DiffusionMatrix dm(vf);
  return kernels::partial_frozen_leading(dm, vf, y);
}

double gauss2(const Vector2d& z, const Matrix2d& q) {
  const double det = q.determinant();
  const double quad = z.dot(q.inverse() * z);
  return std::exp(-0.5 * quad) / (2.0 * M_PI * std::sqrt(det));
}

struct KolmogorovSetup {
  std::unique_ptr<fields::VectorFieldSet> vf;
  Matrix2d b, a, expm, q;
  double t;
};

KolmogorovSetup kolmogorov_setup(double t) {
  KolmogorovSetup s;
  s.vf = models::make_model("kolmogorov", {{"lambda2", 0.9}, {"mu1", 1.3}});
  auto lm = oracle::extract_linear_model(*s.vf);
  s.b = lm.b;
  s.a = lm.a;
  s.t = t;
  auto k = oracle::exact_linear_kernel(lm.b, lm.a, t, Vector2d::Zero());
  s.q = k.q;
  s.expm = Matrix2d::Identity() + t * s.b;  // nilpotent drift
  return s;
}

}  // namespace

TEST_CASE("flow map basics") {
  auto zerovf = models::make_model("zero");
  Vector2d x(0.4, -1.1);
  CHECK((splitting::flow_map(*zerovf, 0, 0.7, x) - x).norm() == 0.0);

  auto kol = models::make_model("kolmogorov", {{"lambda2", 0.9}, {"mu1", 1.3}});
  Vector2d moved = splitting::flow_map(*kol, 0, 0.8, x);
  CHECK(moved[0] == doctest::Approx(x[0] - 1.3 * x[1] * 0.8).epsilon(1e-13));
  CHECK(moved[1] == x[1]);
  CHECK((splitting::flow_map(*kol, 0, 0.0, x) - x).norm() == 0.0);

  splitting::FlowOptions opt;
  opt.steps = 1000;
  Vector2d start(1.0, 0.0);
  Vector2d around = splitting::flow_map(kRotation, 2, 2.0 * M_PI, start, opt);
  CHECK((around - start).norm() <= 1e-8);

  opt.steps = 64;
  Vector2d half = splitting::flow_map(kRotation, 2, 0.5, start, opt);
  Vector2d twice = splitting::flow_map(kRotation, 2, 0.5, half, opt);
  Vector2d whole = splitting::flow_map(kRotation, 2, 1.0, start, opt);
  CHECK((twice - whole).norm() <= 1e-9);

  models::Box box{{-1.0, -1.0}, {1.0, 1.0}};
  opt.box = &box;
  splitting::VecFn push = [](const double*, double* out) {
    out[0] = 1.0;
    out[1] = 0.0;
  };
  Vector2d edge(0.9, 0.0);
  CHECK_THROWS_AS((void)splitting::flow_map(push, 2, 0.5, edge, opt), std::runtime_error);
}

TEST_CASE("duhamel solve") {
  auto kol = models::make_model("kolmogorov", {{"lambda2", 0.9}, {"mu1", 1.3}});
  splitting::VecFn drift = [&](const double* x, double* out) { kol->eval_g(0, x, out); };
  Vector2d x(0.4, -1.1);
  auto f1 = [](const VectorXd& p) { return p[0]; };
  auto zero = [](const VectorXd&) { return 0.0; };
  // Homogeneous: f(F^t x); the kolmogorov drift has mu1 sign flipped, so
  // x1 - mu1 x2 t.
  CHECK(splitting::flow_solve(drift, 2, f1, zero, 1.0, x) ==
        doctest::Approx(x[0] - 1.3 * x[1]).epsilon(1e-12));

  auto c = [](const VectorXd&) { return 0.37; };
  auto fzero = [](const VectorXd&) { return 0.0; };
  CHECK(splitting::flow_solve(drift, 2, fzero, c, 0.8, x) ==
        doctest::Approx(0.37 * 0.8).epsilon(1e-12));

  splitting::FlowOptions opt;
  opt.steps = 256;
  Vector2d start(1.0, 0.0);
  auto g1 = [](const VectorXd& p) { return p[0]; };
  CHECK(splitting::flow_solve(kRotation, 2, fzero, g1, 1.0, start, opt) ==
        doctest::Approx(std::sin(1.0)).epsilon(1e-8));
}

TEST_CASE("cubic interpolation reproduces cubics and flags exits") {
  grid::TensorGrid g({grid::Axis{-2.0, 2.0, 21}, grid::Axis{-2.0, 2.0, 21}});
  auto poly = [](double x, double y) {
    return (x * x * x - 2.0 * x + 1.0) * (0.5 * y * y * y + y - 3.0);
  };
  std::vector<double> vals(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    auto p = g.node_vec(k);
    vals[k] = poly(p[0], p[1]);
  }
  splitting::CubicInterp interp(g, vals);
  for (double qx : {-1.43, 0.21, 1.77})
    for (double qy : {-1.91, 0.03, 0.64}) {
      double q[2] = {qx, qy};
      bool exited = false;
      CHECK(interp(q, &exited) == doctest::Approx(poly(qx, qy)).epsilon(1e-12));
      CHECK_FALSE(exited);
    }
  double outside[2] = {3.0, 0.0};
  bool exited = false;
  CHECK(interp(outside, &exited) == doctest::Approx(poly(2.0, 0.0)).epsilon(1e-12));
  CHECK(exited);
}

TEST_CASE("square walk on commuting constant fields returns exactly") {
  std::istringstream def("dim 2\nfields 2\nterm 1 0 1 0 0\nterm 2 1 1 0 0\n");
  auto vf = models::parse_custom_model(def);
  Vector2d x(0.0, -0.5);
  auto w = splitting::square_walk(*vf, 1, 2, x, 0.25);
  CHECK((w.endpoint - x).norm() == 0.0);
  CHECK(w.estimate.norm() == 0.0);
}

TEST_CASE("square walk reproduces the grushin and kolmogorov brackets") {
  auto gru = models::make_model("grushin");
  Vector2d x(0.7, -0.4);
  auto w = splitting::square_walk(*gru, 1, 2, x, 1e-2);
  VectorXd bracket = fields::lie_bracket(*gru, 2, 1, x);
  CHECK(bracket[0] == doctest::Approx(0.0));
  CHECK(bracket[1] == doctest::Approx(-1.0));
  CHECK((w.estimate - bracket).norm() <= 1e-10);

  auto kol = models::make_model("kolmogorov", {{"lambda2", 0.9}, {"mu1", 1.3}});
  auto wk = splitting::square_walk(*kol, 0, 1, x, 1e-2);
  VectorXd bk = fields::lie_bracket(*kol, 1, 0, x);
  CHECK(bk[0] == doctest::Approx(-1.3 * std::sqrt(0.9)));
  CHECK((wk.estimate - bk).norm() <= 1e-10);
}

TEST_CASE("square walk converges at first order for a non-nilpotent pair") {
  SinPair vf;
  Vector2d x(0.9, 0.1);
  VectorXd bracket = fields::lie_bracket(vf, 2, 1, x);
  CHECK(bracket[1] == doctest::Approx(-std::cos(0.9)));
  std::vector<double> deltas = {1e-1, 3e-2, 1e-2, 3e-3};
  std::vector<double> errs;
  for (double d : deltas)
    errs.push_back((splitting::square_walk(vf, 1, 2, x, d).estimate - bracket).norm());
  // Least-squares slope in log-log.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    const double lx = std::log(deltas[i]), ly = std::log(errs[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double n = static_cast<double>(deltas.size());
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  CHECK(slope >= 0.8);
  CHECK(slope <= 1.5);
}

TEST_CASE("trotter preserves constants") {
  auto s = kolmogorov_setup(0.5);
  splitting::TrotterScheme scheme;
  scheme.leading = kolmogorov_leading(*s.vf, Vector2d(0.0, 1.0));
  scheme.vf = s.vf.get();
  scheme.grid = grid::TensorGrid({grid::Axis{-3.0, 3.0, 65}, grid::Axis{-3.0, 3.0, 65}});
  scheme.m = 4;
  scheme.flow_steps = 4;
  auto res = splitting::trotter_apply(scheme, std::vector<double>(scheme.grid.size(), 1.0), 0.5);
  for (double v : res.values) CHECK(std::abs(v - 1.0) <= 1e-6);
}

TEST_CASE("trotter application converges to the exact semigroup") {
  auto s = kolmogorov_setup(0.5);
  splitting::TrotterScheme scheme;
  scheme.leading = kolmogorov_leading(*s.vf, Vector2d(0.0, 1.0));
  scheme.vf = s.vf.get();
  scheme.grid = grid::TensorGrid({grid::Axis{-4.0, 4.0, 129}, grid::Axis{-4.0, 4.0, 129}});
  scheme.flow_steps = 4;

  const Vector2d c(0.2, -0.1);
  const double bump_sd = 0.4;
  std::vector<double> f(scheme.grid.size());
  for (std::size_t k = 0; k < scheme.grid.size(); ++k) {
    Vector2d p = scheme.grid.node_vec(k);
    f[k] = gauss2(p - c, bump_sd * bump_sd * Matrix2d::Identity());
  }
  // Exact semigroup: E_x f(X_t) = gaussian in c - e^{Bt}x with covariance
  // Q(t) + bump variance.
  const Matrix2d qf = s.q + bump_sd * bump_sd * Matrix2d::Identity();
  std::vector<double> exact(scheme.grid.size());
  for (std::size_t k = 0; k < scheme.grid.size(); ++k) {
    Vector2d p = scheme.grid.node_vec(k);
    exact[k] = gauss2(c - s.expm * p, qf);
  }

  std::vector<double> sup;
  for (int m : {8, 16, 32, 64}) {
    scheme.m = m;
    auto res = splitting::trotter_apply(scheme, f, 0.5);
    double e = 0.0;
    for (std::size_t k = 0; k < res.values.size(); ++k)
      e = std::max(e, std::abs(res.values[k] - exact[k]));
    sup.push_back(e);
  }
  CHECK(sup[3] <= sup[0] / 3.0);
  int violations = 0;
  for (std::size_t i = 1; i < sup.size(); ++i)
    if (sup[i] > sup[i - 1] * 1.10) ++violations;
  CHECK(violations <= 1);
}

TEST_CASE("trotter density of the constant-diffusion model is gaussian") {
  auto ell = models::make_model("elliptic_ou", {{"kappa", 0.0}, {"s1", 1.0}, {"s2", 0.5}});
  kernels::DiffusionMatrix dm(*ell);
  Vector2d y(0.2, -0.3);
  splitting::TrotterScheme scheme;
  scheme.leading = kernels::partial_frozen_leading(dm, *ell, y);
  CHECK(scheme.leading.residual.empty());
  scheme.vf = ell.get();
  const double t = 0.4;
  scheme.grid = grid::TensorGrid({grid::Axis{y[0] - 5.0, y[0] + 5.0, 101},
                                  grid::Axis{y[1] - 3.0, y[1] + 3.0, 101}});
  scheme.m = 8;
  auto dg = splitting::trotter_density(scheme, y, t);

  Matrix2d cov = 2.0 * t * dm.a(y);
  cov(0, 0) += std::pow(scheme.grid.axis(0).step(), 2);
  cov(1, 1) += std::pow(scheme.grid.axis(1).step(), 2);
  double sup = 0.0, peak = 0.0;
  for (std::size_t k = 0; k < dg.grid.size(); ++k) {
    Vector2d p = dg.grid.node_vec(k);
    const double ref = gauss2(p - y, cov);
    peak = std::max(peak, ref);
    sup = std::max(sup, std::abs(dg.values[k] - ref));
  }
  CHECK(sup <= 1e-3 * peak);
  CHECK(dg.mass() >= 0.98);
  CHECK(dg.mass() <= 1.01);
}

TEST_CASE("trotter density matches the exact kolmogorov kernel in both modes") {
  auto s = kolmogorov_setup(0.5);
  Vector2d y(0.0, 0.0);
  splitting::TrotterScheme scheme;
  scheme.leading = kolmogorov_leading(*s.vf, Vector2d(0.0, 1.0));
  scheme.vf = s.vf.get();
  scheme.grid = grid::TensorGrid({grid::Axis{-4.0, 4.0, 129}, grid::Axis{-3.8, 3.8, 129}});
  scheme.m = 64;
  scheme.flow_steps = 4;

  for (auto mode : {splitting::TrotterMode::function, splitting::TrotterMode::density}) {
    scheme.mode = mode;
    auto dg = splitting::trotter_density(scheme, y, s.t);
    for (double v : dg.values) CHECK(v >= -1e-8);
    CHECK(dg.mass() >= 0.98);
    CHECK(dg.mass() <= 1.01);

    grid::DensityGrid ref;
    ref.grid = scheme.grid;
    ref.t = s.t;
    ref.y = y;
    ref.values.resize(scheme.grid.size());
    Matrix2d qb = s.q;  // widen by the one-cell seed bump
    qb(0, 0) += std::pow(scheme.grid.axis(0).step(), 2);
    qb(1, 1) += std::pow(scheme.grid.axis(1).step(), 2);
    for (std::size_t k = 0; k < scheme.grid.size(); ++k) {
      Vector2d x = scheme.grid.node_vec(k);
      // function mode: backward slice p(t, y; x); density mode: forward
      // slice p(t, x; y).
      ref.values[k] = mode == splitting::TrotterMode::function
                          ? gauss2(Vector2d(y - s.expm * x), qb)
                          : gauss2(Vector2d(x - s.expm * y), qb);
    }
    CHECK(grid::tv_distance(dg, ref) <= 0.05);
  }
}

TEST_CASE("smoothing diagnostic: non-diffused direction smooths as t grows") {
  auto s = kolmogorov_setup(0.5);
  splitting::TrotterScheme scheme;
  scheme.leading = kolmogorov_leading(*s.vf, Vector2d(0.0, 1.0));
  scheme.vf = s.vf.get();
  scheme.grid = grid::TensorGrid({grid::Axis{-4.0, 4.0, 129}, grid::Axis{-3.8, 3.8, 129}});
  scheme.m = 32;
  scheme.flow_steps = 4;
  auto coarse = splitting::trotter_density(scheme, Vector2d::Zero(), 0.5);
  auto sharp = splitting::trotter_density(scheme, Vector2d::Zero(), 0.25);
  const double d2_t = coarse.meta.at("d2_axis0");
  const double d2_half = sharp.meta.at("d2_axis0");
  CHECK(std::isfinite(d2_t));
  CHECK(d2_t > 0.0);
  CHECK(d2_half / d2_t > 1.0);
}
