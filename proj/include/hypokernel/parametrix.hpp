#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <vector>

#include "hypokernel/fields.hpp"
#include "hypokernel/grid.hpp"
#include "hypokernel/kernels.hpp"

// Levy expansion: residual kernel, Volterra recursion, truncated series
// density, and two-patch partition-of-unity blending.

namespace hypokernel::parametrix {

// Graded midpoint rule in time tensored with a trapezoid spatial grid.  Bands
// halve geometrically toward both endpoints (the weak singularities), each
// band split into `cells` equal midpoint cells; weights sum to t - s.
struct SpaceTimeGrid {
  double s = 0.0, t = 0.0;
  std::vector<double> sigma;   // interior time nodes, ascending
  std::vector<double> weight;  // per-node time weights, all positive
  grid::TensorGrid space;

  SpaceTimeGrid() = default;
  SpaceTimeGrid(double s, double t, int levels, int cells, grid::TensorGrid space_grid);
};

// values[a][k] = f(sigma_a, space node k)
using TimeSpace = std::vector<std::vector<double>>;

// Frozen Gaussian per spatial node; degenerate freeze points keep the
// zero-branch member (its value and derivatives vanish identically).
class N0Family {
 public:
  N0Family(const kernels::DiffusionMatrix& a, const grid::TensorGrid& g);
  [[nodiscard]] const kernels::FrozenGaussian& at(std::size_t node) const { return *member_[node]; }
  [[nodiscard]] bool degenerate(std::size_t node) const { return member_[node]->degenerate(); }

 private:
  std::vector<std::unique_ptr<kernels::FrozenGaussian>> member_;
};

// sum_ij (a_ij(y) - a_ij(x)) d2_ij N0 + sum_j b_j(x) d_j N0 at (t, x; s),
// where y is n0's freeze point; 0 on the degenerate-y branch.
double residual_kernel(const kernels::DiffusionMatrix& a, const fields::VectorFieldSet& vf,
                       const kernels::FrozenGaussian& n0, double t, const Eigen::VectorXd& x,
                       double s);

// One Volterra composition: out[b][x] = int_s^{sigma_b} int K1(sigma_b, x;
// sigma_a, xi) prev[a][xi], graded-midpoint in time, trapezoid in space.
TimeSpace volterra_step(const SpaceTimeGrid& g, const kernels::DiffusionMatrix& a,
                        const fields::VectorFieldSet& vf, const N0Family& fam,
                        const TimeSpace& prev);

struct ParametrixOptions {
  int order = 2;        // series truncation M
  int time_levels = 8;  // geometric bands per half interval
  int time_cells = 1;   // midpoint cells per band
  int space_nodes = 201;                    // per axis for the default box
  const grid::TensorGrid* space = nullptr;  // overrides the 6-sigma default box
  double s = 0.0;
};

// p_M = N0 + N0 * sum_{m<=M} (-1)^m (LN0)_m; per-order sup norms recorded in
// meta as term_norm_m.  Throws when consecutive term norms fail to decrease.
grid::DensityGrid density_approx(const fields::VectorFieldSet& vf, const Eigen::VectorXd& y,
                                 double t, const ParametrixOptions& opt = {});

// Mass-normalized convex blend c (phi1 pA + phi2 pB) on the aligned union
// lattice; c makes the blended mass min(mass(pA), mass(pB), 1).
grid::DensityGrid blend_local_densities(const grid::DensityGrid& pa, const grid::DensityGrid& pb,
                                        const std::function<double(const Eigen::VectorXd&)>& phi1,
                                        const std::function<double(const Eigen::VectorXd&)>& phi2);

}  // namespace hypokernel::parametrix
