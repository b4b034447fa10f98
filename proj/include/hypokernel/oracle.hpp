#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "hypokernel/fields.hpp"
#include "hypokernel/grid.hpp"

// Independent ground truth: Euler-Maruyama sampling of
//   dX = b(X) dt + sqrt(2) sigma(X) dW
// (so terminal covariance matches the kernel dictionary cov = 2at), kernel
// density estimation, and the exact Gaussian kernel for linear-drift
// constant-diffusion models via the Lyapunov ODE Q' = BQ + QB^T + 2a.

namespace hypokernel::oracle {

// Philox4x32-10 counter-based generator; reference vectors pinned in tests.
[[nodiscard]] std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                                         std::array<std::uint32_t, 2> key);

// Two independent standard normals, pure in (seed, path, step, lane).
[[nodiscard]] std::array<double, 2> normal_pair(std::uint64_t seed, std::uint64_t path,
                                                std::uint32_t step, std::uint32_t lane);

struct SdeSpec {
  const fields::VectorFieldSet* vf = nullptr;
  Eigen::VectorXd x0;
  double t = 1.0;
  int steps = 100;
  int paths = 1000;
  std::uint64_t seed = 1;
};

struct SampleSet {
  Eigen::MatrixXd points;  // kept paths x dim, original path order
  int requested = 0;
  int excluded = 0;  // paths dropped after a non-finite state

  [[nodiscard]] int kept() const { return static_cast<int>(points.rows()); }
};

SampleSet euler_maruyama(const SdeSpec& spec);

struct MomentSummary {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;      // sample covariance, 1/(N-1)
  Eigen::VectorXd mean_se;  // sqrt(cov_ii / N)
  Eigen::MatrixXd cov_se;   // sqrt((cov_ii cov_jj + cov_ij^2) / N)
  int n = 0;
};
MomentSummary moments(const SampleSet& s);

struct KdeResult {
  grid::DensityGrid density;
  Eigen::VectorXd bandwidth;  // per coordinate, Scott's rule
  bool floored = false;       // bandwidth hit the one-grid-cell floor
};
// Gaussian-kernel density estimate on the grid via linear binning plus
// per-axis discrete convolution truncated at 6 bandwidths.
KdeResult kde_density(const Eigen::MatrixXd& samples, const grid::TensorGrid& g);

struct GaussianKernel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd q;  // covariance

  [[nodiscard]] double det_q() const { return q.determinant(); }
  [[nodiscard]] double density(const Eigen::VectorXd& x) const;
};

// mean = e^{Bt} x (scaling-and-squaring), covariance by RK4 on the Lyapunov
// ODE with source 2a.
GaussianKernel exact_linear_kernel(const Eigen::MatrixXd& b, const Eigen::MatrixXd& a, double t,
                                   const Eigen::VectorXd& x);

// Exact moments of the Euler-Maruyama chain itself for b(x) = Bx, constant
// a: mean (I+Bh)^N x, covariance Q <- MQM^T + 2ah.  Quantifies the
// discretization offset when validating against exact_linear_kernel.
GaussianKernel discrete_linear_moments(const Eigen::MatrixXd& b, const Eigen::MatrixXd& a,
                                       double t, int steps, const Eigen::VectorXd& x);

struct LinearModel {
  Eigen::MatrixXd b;
  Eigen::MatrixXd a;
};
// B from the drift jacobian at 0, a from the diffusion there; throws if the
// drift is not linear or the diffusion not constant at probe points.
LinearModel extract_linear_model(const fields::VectorFieldSet& vf, double radius = 2.0);

struct DeltaFamilyReport {
  std::vector<double> t;          // decreasing ladder
  std::vector<double> deviation;  // |sum w f p(t) - f(y)|
  bool decreasing = false;
  double final_deviation = 0.0;
};
// Delta-family behavior of a density family over t down to 0 against a
// smooth test function; grids must share the spatial box and base point.
DeltaFamilyReport delta_family_check(const std::vector<grid::DensityGrid>& family,
                                     const std::function<double(const Eigen::VectorXd&)>& f);

}  // namespace hypokernel::oracle
