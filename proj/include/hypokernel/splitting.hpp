#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "hypokernel/fields.hpp"
#include "hypokernel/grid.hpp"
#include "hypokernel/kernels.hpp"
#include "hypokernel/models.hpp"

// Characteristic flows, Duhamel solutions, the Trotter product of the
// partially-frozen leading operator, and the commutator square walk.

namespace hypokernel::splitting {

using VecFn = std::function<void(const double* x, double* out)>;

struct FlowOptions {
  int steps = 64;
  const models::Box* box = nullptr;  // when set, the trajectory must stay inside
};

// RK4 composition approximating F^t x; t may be negative.
Eigen::VectorXd flow_map(const VecFn& rhs, int dim, double t, const Eigen::VectorXd& x,
                         const FlowOptions& opt = {});
Eigen::VectorXd flow_map(const fields::VectorFieldSet& vf, int g, double t,
                         const Eigen::VectorXd& x, const FlowOptions& opt = {});

// Duhamel: u(t,x) = f(F^t x) + int_0^t g(F^s x) ds, quadrature carried by the
// same RK4 sweep as the trajectory.
double flow_solve(const VecFn& rhs, int dim, const std::function<double(const Eigen::VectorXd&)>& f,
                  const std::function<double(const Eigen::VectorXd&)>& g, double t,
                  const Eigen::VectorXd& x, const FlowOptions& opt = {});

// Tensor-product cubic interpolation with constant extension outside the box.
class CubicInterp {
 public:
  CubicInterp(const grid::TensorGrid& g, const std::vector<double>& values);
  // exited is set when any query coordinate was clamped to the box.
  [[nodiscard]] double operator()(const double* q, bool* exited = nullptr) const;
  // Quasi-monotone variant: the cubic value clamped to the range of the 2^d
  // nodes enclosing q, so nonnegative data stays nonnegative.
  [[nodiscard]] double clamped(const double* q, bool* exited = nullptr) const;

 private:
  const grid::TensorGrid* grid_;
  const std::vector<double>* values_;
};

enum class TrotterMode {
  function,  // backward: u <- exp(tau L0) (u o F^tau)
  density    // forward: push-forward with the flow volume change
};

struct TrotterScheme {
  kernels::PartialFrozenLeading leading;
  const fields::VectorFieldSet* vf = nullptr;  // residual drift source
  grid::TensorGrid grid;
  int m = 8;           // Trotter substeps
  int flow_steps = 8;  // RK4 steps per drift substep
  TrotterMode mode = TrotterMode::function;
};

struct TrotterResult {
  std::vector<double> values;
  int interp_exits = 0;                // clamped pullback queries
  std::vector<double> d2_max_by_axis;  // max |second difference| / step^2
};

// m alternations of residual-drift pullback and exact frozen-coordinate
// Gaussian convolution (variance 2 lambda_i t/m per frozen axis).
TrotterResult trotter_apply(const TrotterScheme& scheme, std::vector<double> f, double t);

// trotter_apply on a one-cell Gaussian bump at y: approximates the leading
// operator's kernel x -> p(t, y; x) on the scheme grid.
grid::DensityGrid trotter_density(const TrotterScheme& scheme, const Eigen::VectorXd& y, double t);

struct WalkResult {
  Eigen::VectorXd endpoint;
  Eigen::VectorXd estimate;  // (endpoint - x) / delta^2
};

// Flow square +V_j, +V_i, -V_j, -V_i (j leg first), so the delta^2 drift
// approximates lie_bracket(j, i) at x.
WalkResult square_walk(const fields::VectorFieldSet& vf, int i, int j, const Eigen::VectorXd& x,
                       double delta, int steps = 32);

}  // namespace hypokernel::splitting
