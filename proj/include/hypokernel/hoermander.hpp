#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "hypokernel/fields.hpp"
#include "hypokernel/grid.hpp"
#include "hypokernel/models.hpp"

// Hoermander space recursion H^k_x, numerical rank verdicts, and sampling
// probes for the weak (dense-set) form of the condition.
//
// classical: H^0 = span{sigma_1..sigma_m}, levels >= 1 bracket with
//            generators 0..m (drift included as bracketing generator).
// reduced:   H^0 = span{V_0, V_1..V_m}, levels >= 1 bracket with 1..m only.

namespace hypokernel::hoermander {

enum class Mode { classical, reduced };

struct RankOptions {
  Mode mode = Mode::classical;
  int cap = 3;           // maximum bracket depth
  double tol = 1e-8;     // numerical rank threshold, relative to sigma_max
  int max_order = 4;     // dual derivative order budget
};

struct BasisElement {
  fields::BracketWord word;
  Eigen::VectorXd vector;
  int depth = 0;
};

struct BracketBasis {
  Eigen::VectorXd x;
  int depth_reached = 0;
  std::vector<BasisElement> elements;     // retained spanning set with provenance
  std::vector<double> singular_values;    // of the stacked element matrix
  std::vector<int> rank_by_depth;         // rank of H^0..H^depth_reached
  int rank = 0;
  std::optional<int> depth_at_full_rank;  // empty: cap exhausted below full rank

  [[nodiscard]] bool full_rank(int n) const { return rank == n; }
};

BracketBasis rank_recursion(const fields::VectorFieldSet& vf, const Eigen::VectorXd& x,
                            const RankOptions& opt = {});

enum class Sampler { halton, uniform };

struct ProbeOptions {
  RankOptions rank;
  Sampler sampler = Sampler::halton;
  unsigned seed = 1;  // used by the uniform sampler only
};

struct ConditionReport {
  int requested = 0;
  int evaluated = 0;
  int skipped_non_smooth = 0;
  double fraction_full_rank = 0.0;
  std::vector<int> depth_histogram;  // index = depth at full rank
  int not_achieved = 0;
  Mode mode = Mode::classical;
  double tol = 0.0;
  int cap = 0;
  std::vector<Eigen::VectorXd> points;
  std::vector<int> depth_per_point;  // -1: not achieved, -2: skipped
  std::vector<int> rank_per_point;
};

ConditionReport weak_condition_probe(const fields::VectorFieldSet& vf, const models::Box& box,
                                     int samples, const ProbeOptions& opt = {});

// Depth at full rank per grid node, -1 where the cap is exhausted first.
std::vector<int> degeneracy_depth_map(const fields::VectorFieldSet& vf,
                                      const grid::TensorGrid& g, const RankOptions& opt = {});

// Radical-inverse Halton point in [0,1)^dim for 1-based index.
Eigen::VectorXd halton_point(std::size_t index, int dim);

}  // namespace hypokernel::hoermander
