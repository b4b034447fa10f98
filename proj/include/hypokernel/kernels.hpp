#pragma once

#include <Eigen/Dense>
#include <vector>

#include "hypokernel/fields.hpp"
#include "hypokernel/grid.hpp"
#include "hypokernel/models.hpp"

// Diffusion matrix a = sigma sigma^T, its eigen structure, degeneracy
// detection, and the frozen-coefficient Gaussian leading term
//   N0(t,x;s,y) = (4 pi (t-s))^{-n/2} det(a(y))^{-1/2}
//                 exp(-(x-y)^T a(y)^{-1} (x-y) / (4(t-s))),
// which solves dt u = sum a_ij(y) d2_ij u with unit mass.  When any
// eigenvalue of a(y) is degenerate the value is the natural limit: 0.

namespace hypokernel::kernels {

struct EigenPair {
  Eigen::VectorXd lambda;  // descending, negatives within -1e-12 clipped to 0
  Eigen::MatrixXd d;       // rows are eigenvectors: a = d^T diag(lambda) d
};

class DiffusionMatrix {
 public:
  explicit DiffusionMatrix(const fields::VectorFieldSet& vf) : vf_(&vf) {}

  [[nodiscard]] int dim() const { return vf_->dim(); }
  [[nodiscard]] const fields::VectorFieldSet& field_set() const { return *vf_; }

  [[nodiscard]] Eigen::MatrixXd a(const Eigen::VectorXd& x) const;
  [[nodiscard]] EigenPair eigen(const Eigen::VectorXd& x) const;

  // Degeneracy tolerance at this eigen structure: eps_rel * max lambda.
  [[nodiscard]] double eps_lambda(const EigenPair& e) const;
  [[nodiscard]] double eps_rel() const { return eps_rel_; }

 private:
  const fields::VectorFieldSet* vf_;
  double eps_rel_ = 1e-10;
};

struct DegeneracyReport {
  std::vector<double> eps;       // decreasing ladder of absolute thresholds
  std::vector<double> fraction;  // sampled fraction with min lambda <= eps
  int samples = 0;
};

// Halton-sampled estimate of the measure fraction of {min lambda <= eps}.
DegeneracyReport degeneracy_probe(const DiffusionMatrix& a, const models::Box& box, int samples,
                                  std::vector<double> eps_ladder = {});

class FrozenGaussian {
 public:
  FrozenGaussian(const DiffusionMatrix& a, const Eigen::VectorXd& y);

  [[nodiscard]] const Eigen::VectorXd& y() const { return y_; }
  [[nodiscard]] const Eigen::VectorXd& lambda() const { return lambda_; }
  [[nodiscard]] const Eigen::MatrixXd& d() const { return d_; }
  [[nodiscard]] const std::vector<bool>& degenerate_flags() const { return degenerate_flags_; }
  [[nodiscard]] bool degenerate() const { return degenerate_; }
  [[nodiscard]] double eps_lambda() const { return eps_lambda_; }
  [[nodiscard]] double eps_reg() const { return eps_reg_; }
  [[nodiscard]] double lambda_max() const { return lambda_.size() ? lambda_[0] : 0.0; }
  // a(y)^{-1}; only meaningful for nondegenerate y.
  [[nodiscard]] const Eigen::MatrixXd& a_inv() const { return a_inv_; }

  [[nodiscard]] double value(double t, const Eigen::VectorXd& x, double s) const;
  // Analytic x derivatives and dt, valid for nondegenerate y (0 otherwise).
  [[nodiscard]] Eigen::VectorXd grad_x(double t, const Eigen::VectorXd& x, double s) const;
  [[nodiscard]] Eigen::MatrixXd hess_x(double t, const Eigen::VectorXd& x, double s) const;
  [[nodiscard]] double dt(double t, const Eigen::VectorXd& x, double s) const;

  // Per-coordinate truncation radius covering all eigen directions: tail
  // mass below 1e-8 within |x_i - y_i| <= radius.
  [[nodiscard]] double truncation_radius(double tau) const;

 private:
  [[nodiscard]] double check_tau(double t, double s) const;

  Eigen::VectorXd y_, lambda_;
  Eigen::MatrixXd d_, a_inv_;
  std::vector<bool> degenerate_flags_;
  double inv_sqrt_det_ = 0.0;
  double eps_lambda_ = 0.0;
  double eps_reg_ = 0.0;
  bool degenerate_ = false;
  int n_ = 0;
};

// Partially-frozen leading operator at y: frozen coordinates keep their
// (diagonal) diffusion, every other coordinate keeps only its drift, each
// certified by a witness pair with nonvanishing coupling and jacobian entry.
struct PartialFrozenLeading {
  Eigen::VectorXd y;
  std::vector<int> frozen;           // coordinate indices with a_ii(y) > eps
  std::vector<double> frozen_lambda; // a_ii(y) per frozen index
  std::vector<int> residual;         // drift-only coordinate indices
  std::vector<int> witness;          // per residual j: frozen i certifying it
};

// Auto-selects the frozen set when none is given.  Throws when a(y) is not
// diagonal on the frozen rows or a residual coordinate has no witness.
PartialFrozenLeading partial_frozen_leading(const DiffusionMatrix& a,
                                            const fields::VectorFieldSet& vf,
                                            const Eigen::VectorXd& y,
                                            const std::vector<int>& frozen_set = {});

}  // namespace hypokernel::kernels
