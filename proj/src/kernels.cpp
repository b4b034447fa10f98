#include "hypokernel/kernels.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "hypokernel/hoermander.hpp"
#include "hypokernel/parallel.hpp"

namespace hypokernel::kernels {

namespace {

constexpr double kSymmetryTol = 1e-12;
constexpr double kNegativeClip = -1e-12;

}  // namespace

Eigen::MatrixXd DiffusionMatrix::a(const Eigen::VectorXd& x) const {
  Eigen::MatrixXd m = fields::assemble_diffusion(*vf_, x);
  if (!m.allFinite()) throw std::runtime_error("diffusion matrix has non-finite entries");
  const double scale = 1.0 + m.cwiseAbs().maxCoeff();
  if (((m - m.transpose()).cwiseAbs().maxCoeff()) > kSymmetryTol * scale)
    throw std::runtime_error("diffusion matrix not symmetric");
  return 0.5 * (m + m.transpose());
}

EigenPair DiffusionMatrix::eigen(const Eigen::VectorXd& x) const {
  Eigen::MatrixXd m = a(x);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  const int n = dim();
  EigenPair out;
  out.lambda.resize(n);
  out.d.resize(n, n);
  const double scale = 1.0 + m.cwiseAbs().maxCoeff();
  for (int i = 0; i < n; ++i) {
    double lam = es.eigenvalues()[n - 1 - i];  // descending
    if (lam < kNegativeClip * scale) throw std::runtime_error("diffusion matrix not PSD");
    out.lambda[i] = std::max(lam, 0.0);
    out.d.row(i) = es.eigenvectors().col(n - 1 - i).transpose();
    // Deterministic sign: largest-magnitude entry positive.
    int arg = 0;
    out.d.row(i).cwiseAbs().maxCoeff(&arg);
    if (out.d(i, arg) < 0.0) out.d.row(i) = -out.d.row(i);
  }
  return out;
}

double DiffusionMatrix::eps_lambda(const EigenPair& e) const {
  return eps_rel_ * (e.lambda.size() ? e.lambda[0] : 0.0);
}

DegeneracyReport degeneracy_probe(const DiffusionMatrix& a, const models::Box& box, int samples,
                                  std::vector<double> eps_ladder) {
  if (samples < 1) throw std::invalid_argument("degeneracy_probe: samples must be >= 1");
  if (eps_ladder.empty()) eps_ladder = {1e-2, 1e-3, 1e-4, 1e-6, 1e-8};
  std::sort(eps_ladder.begin(), eps_ladder.end(), std::greater<>());

  const int n = box.dim();
  std::vector<double> min_lambda(static_cast<std::size_t>(samples));
  parallel_for(static_cast<std::size_t>(samples), [&](std::size_t k) {
    Eigen::VectorXd u = hoermander::halton_point(k + 1, n);
    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i) x[i] = box.lo[i] + (box.hi[i] - box.lo[i]) * u[i];
    min_lambda[k] = a.eigen(x).lambda.minCoeff();
  });

  DegeneracyReport rep;
  rep.samples = samples;
  rep.eps = eps_ladder;
  for (double eps : eps_ladder) {
    int hit = 0;
    for (double lam : min_lambda)
      if (lam <= eps) ++hit;
    rep.fraction.push_back(static_cast<double>(hit) / samples);
  }
  return rep;
}

FrozenGaussian::FrozenGaussian(const DiffusionMatrix& a, const Eigen::VectorXd& y)
    : y_(y), n_(a.dim()) {
  EigenPair e = a.eigen(y);
  lambda_ = std::move(e.lambda);
  d_ = std::move(e.d);
  eps_lambda_ = a.eps_lambda({lambda_, d_});
  eps_reg_ = 1e-8 * lambda_max();
  degenerate_flags_.resize(static_cast<std::size_t>(n_));
  for (int i = 0; i < n_; ++i) {
    degenerate_flags_[static_cast<std::size_t>(i)] = lambda_[i] <= eps_lambda_;
    degenerate_ = degenerate_ || degenerate_flags_[static_cast<std::size_t>(i)];
  }
  if (!degenerate_) {
    a_inv_ = d_.transpose() * lambda_.cwiseInverse().asDiagonal() * d_;
    inv_sqrt_det_ = 1.0 / std::sqrt(lambda_.prod());
  } else {
    a_inv_ = Eigen::MatrixXd::Zero(n_, n_);
  }
}

double FrozenGaussian::check_tau(double t, double s) const {
  const double tau = t - s;
  if (!(tau > 0.0)) throw std::invalid_argument("frozen gaussian requires t > s");
  return tau;
}

double FrozenGaussian::value(double t, const Eigen::VectorXd& x, double s) const {
  const double tau = check_tau(t, s);
  if (degenerate_) return 0.0;
  const Eigen::VectorXd z = x - y_;
  const double q = z.dot(a_inv_ * z);
  return std::pow(4.0 * M_PI * tau, -0.5 * n_) * inv_sqrt_det_ * std::exp(-0.25 * q / tau);
}

Eigen::VectorXd FrozenGaussian::grad_x(double t, const Eigen::VectorXd& x, double s) const {
  const double tau = check_tau(t, s);
  if (degenerate_) return Eigen::VectorXd::Zero(n_);
  const Eigen::VectorXd az = a_inv_ * (x - y_);
  return (-0.5 / tau) * value(t, x, s) * az;
}

Eigen::MatrixXd FrozenGaussian::hess_x(double t, const Eigen::VectorXd& x, double s) const {
  const double tau = check_tau(t, s);
  if (degenerate_) return Eigen::MatrixXd::Zero(n_, n_);
  const Eigen::VectorXd az = a_inv_ * (x - y_);
  const double v = value(t, x, s);
  return v * ((0.25 / (tau * tau)) * (az * az.transpose()) - (0.5 / tau) * a_inv_);
}

double FrozenGaussian::dt(double t, const Eigen::VectorXd& x, double s) const {
  const double tau = check_tau(t, s);
  if (degenerate_) return 0.0;
  const Eigen::VectorXd z = x - y_;
  const double q = z.dot(a_inv_ * z);
  return (-0.5 * n_ / tau + 0.25 * q / (tau * tau)) * value(t, x, s);
}

double FrozenGaussian::truncation_radius(double tau) const {
  return 6.0 * std::sqrt(2.0 * lambda_max() * tau);
}

PartialFrozenLeading partial_frozen_leading(const DiffusionMatrix& a,
                                            const fields::VectorFieldSet& vf,
                                            const Eigen::VectorXd& y,
                                            const std::vector<int>& frozen_set) {
  const int n = a.dim();
  const Eigen::MatrixXd ay = a.a(y);
  const double eps = a.eps_rel() * std::max(ay.diagonal().maxCoeff(), 0.0);
  const double off_tol = 1e-10 * (1.0 + ay.cwiseAbs().maxCoeff());

  PartialFrozenLeading out;
  out.y = y;
  if (frozen_set.empty()) {
    for (int i = 0; i < n; ++i)
      if (ay(i, i) > eps) out.frozen.push_back(i);
  } else {
    out.frozen = frozen_set;
    for (int i : out.frozen)
      if (!(ay(i, i) > eps))
        throw std::runtime_error("partial_frozen_leading: chosen index " + std::to_string(i + 1) +
                                 " is degenerate at y");
  }
  for (int i : out.frozen) {
    out.frozen_lambda.push_back(ay(i, i));
    for (int j = 0; j < n; ++j)
      if (j != i && std::abs(ay(i, j)) > off_tol)
        throw std::runtime_error("partial_frozen_leading: diffusion not diagonal on frozen row " +
                                 std::to_string(i + 1));
  }

  const Eigen::VectorXd b = fields::drift(vf, y);
  const Eigen::MatrixXd jb = fields::jacobian(vf, 0, y);
  const double b_tol = 1e-12 * (1.0 + b.cwiseAbs().maxCoeff());
  for (int j = 0; j < n; ++j) {
    if (std::find(out.frozen.begin(), out.frozen.end(), j) != out.frozen.end()) continue;
    int found = -1;
    for (int i : out.frozen)
      if (std::abs(b[j]) > b_tol && ay(i, i) > eps && std::abs(jb(j, i)) > 1e-12) {
        found = i;
        break;
      }
    if (found < 0)
      throw std::runtime_error(
          "partial_frozen_leading: witness condition fails for coordinate " +
          std::to_string(j + 1) + " at y; pick a different freeze point in the ball");
    out.residual.push_back(j);
    out.witness.push_back(found);
  }
  return out;
}

}  // namespace hypokernel::kernels
