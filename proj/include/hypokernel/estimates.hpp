#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hypokernel/fields.hpp"
#include "hypokernel/grid.hpp"
#include "hypokernel/models.hpp"

// Gaussian-envelope verification for density derivative grids,
//   |d^j_t d^alpha_x d^beta_y p(t,x;y)| <= A (1+|x|)^m t^{-n} exp(-B|x-y|^2/t),
// finite-difference derivative orchestration over (t, x, y), and the
// mollification ladder approximating Lipschitz coefficients by smooth ones.

namespace hypokernel::estimates {

// p(t, .; y) on a fixed spatial layout; every call must return that layout.
using DensityMaker = std::function<grid::DensityGrid(double, const Eigen::VectorXd&)>;

struct DerivativeRequest {
  int j = 0;               // time order, at most 2
  std::vector<int> alpha;  // x multi-index per axis (empty = none)
  std::vector<int> beta;   // y multi-index per axis, at most 2 each
  double dt = 1e-3;
  double dy = 1e-3;
};

// Central differences along the grid axes; second-order one-sided rows at
// the two boundary nodes keep the output on the full grid.
[[nodiscard]] std::vector<double> x_derivative(const grid::DensityGrid& p,
                                               const std::vector<int>& alpha);

// d^j_t d^alpha_x d^beta_y p: x by grid stencils, t and y by central steps
// around (t, y) with one maker call per stencil point.
[[nodiscard]] grid::DensityGrid derivative_grid(const DensityMaker& make, double t,
                                                const Eigen::VectorXd& y,
                                                const DerivativeRequest& req);

struct EnvelopeSamples {
  grid::TensorGrid grid;
  Eigen::VectorXd y;
  std::vector<double> t;                    // ascending, distinct
  std::vector<std::vector<double>> values;  // values[level][node]
};

// Shared-layout family with a common base point, sorted by t.
[[nodiscard]] EnvelopeSamples envelope_samples(std::vector<grid::DensityGrid> family);

struct EnvelopeOptions {
  std::vector<double> b_lattice;  // empty = geometric 2^-6 .. 2^4
  double n_max = 4.0;
  double n_step = 0.25;
  double m_max = 4.0;
  double m_step = 1.0;
  double flat_ratio = 1.2;  // profile candidates within this factor of flattest
  bool refine = true;       // one half-step refinement pass around the winner
};

struct EnvelopeFit {
  int j = 0;
  std::vector<int> alpha, beta;
  double a = 0.0, b = 0.0;  // constants A, B
  double n = 0.0, m = 0.0;  // real exponents
  int n_int = 0, m_int = 0;
  std::vector<double> t;
  std::vector<double> a_level, b_level;  // per time level
  double margin = 0.0;                   // min over samples of bound - |value|
  bool a_monotone = false;               // a_level non-decreasing (1e-9 slack)
  std::size_t samples = 0;
  bool zero = false;  // all-zero input, A = 0
};

// Coarse lattice over (B, n, m) with the exact per-level minimal
// A_l = max |value| / shape; flattest A_l profile first, then smallest m,
// smallest A, largest B, then one refinement pass.
[[nodiscard]] EnvelopeFit fit_envelope(const EnvelopeSamples& s, const DerivativeRequest& order,
                                       const EnvelopeOptions& opt = {});

[[nodiscard]] double envelope_bound(const EnvelopeFit& f, double t, const Eigen::VectorXd& x,
                                    const Eigen::VectorXd& y);

// Discrete mollifier: the exp(-1/(1-|z|^2)) bump scaled to radius 1/m on a
// tensor grid, weights normalized to sum exactly to 1, zero nodes pruned.
struct MollifierRule {
  std::vector<Eigen::VectorXd> node;
  std::vector<double> w;
  double radius = 0.0;
};
[[nodiscard]] MollifierRule mollifier_rule(int dim, int m, int quad_nodes = 33);

using ScalarFn = std::function<double(const Eigen::VectorXd&)>;
[[nodiscard]] ScalarFn mollify_scalar(ScalarFn base, int dim, int m, int quad_nodes = 33);

// Generator-wise mollification of a field set: every sigma column and the
// drift convolved with the same rule, so a^m = sigma^m (sigma^m)^T stays
// positive semidefinite and the set is smooth everywhere.
class MollifiedFieldSet final : public fields::FieldSetBase<MollifiedFieldSet> {
 public:
  MollifiedFieldSet(const fields::VectorFieldSet& base, int m, int quad_nodes = 33);

  [[nodiscard]] int dim() const override { return base_->dim(); }
  [[nodiscard]] int num_diffusion() const override { return base_->num_diffusion(); }
  [[nodiscard]] std::string name() const override;
  [[nodiscard]] std::vector<std::pair<std::string, double>> params() const override;
  [[nodiscard]] int scale() const { return m_; }

  template <class T>
  void eval_impl(int i, const T* x, T* out) const {
    const int n = base_->dim();
    T xx[8], tmp[8];
    for (int c = 0; c < n; ++c) out[c] = T(0.0);
    for (std::size_t k = 0; k < rule_.node.size(); ++k) {
      for (int c = 0; c < n; ++c) xx[c] = x[c] - rule_.node[k][c];
      base_->eval_g(i, xx, tmp);
      for (int c = 0; c < n; ++c) out[c] += tmp[c] * rule_.w[k];
    }
  }

 private:
  const fields::VectorFieldSet* base_;
  int m_;
  MollifierRule rule_;
};

struct MollifyOptions {
  int quad_nodes = 33;
  int probe_nodes = 33;          // per axis for the sup-error probe
  bool base_box_limited = false; // shrink the output box by the support radius
};

struct MollifiedModel {
  int m = 0;
  std::shared_ptr<const MollifiedFieldSet> smooth;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> a;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> b;
  double sup_error_a = 0.0;  // max |a^m - a| entrywise over the probe box
  double sup_error_b = 0.0;
  models::Box box;
  bool shrunk = false;
};

[[nodiscard]] MollifiedModel mollify_coefficients(const fields::VectorFieldSet& base, int m,
                                                  const models::Box& box,
                                                  const MollifyOptions& opt = {});

struct LimitOptions {
  std::vector<int> ladder = {4, 8, 16};
  int order = 2;        // parametrix series order per level
  int time_levels = 4;
  int time_cells = 1;
  int space_nodes = 101;
  int quad_nodes = 17;  // mollifier quadrature
  const grid::TensorGrid* space = nullptr;  // overrides the default box
};

struct CauchyReport {
  std::vector<int> ladder;
  std::vector<double> sup_diff;        // |p^{m_{i+1}} - p^{m_i}|_sup
  std::vector<double> cross_residual;  // |(L - L^m) p^m|_sup, interior FD
  std::vector<double> mass;
  bool decreasing = false;             // sup_diff non-increasing (1e-12 slack)
  grid::TensorGrid grid;
  std::vector<grid::DensityGrid> densities;
};

// p^m by the series construction per ladder level on one shared grid; the
// computable face of the classical limit for Lipschitz coefficients.
[[nodiscard]] CauchyReport density_limit_check(const fields::VectorFieldSet& vf, double t,
                                               const Eigen::VectorXd& y,
                                               const LimitOptions& opt = {});

}  // namespace hypokernel::estimates
