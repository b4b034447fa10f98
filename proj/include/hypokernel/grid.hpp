#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace hypokernel::grid {

struct Axis {
  double lo = 0.0;
  double hi = 1.0;
  int count = 2;

  [[nodiscard]] double step() const { return (hi - lo) / (count - 1); }
  [[nodiscard]] double node(int i) const { return lo + step() * i; }
};

// Uniform tensor-product grid, row-major flat order (axis 0 slowest).
class TensorGrid {
 public:
  TensorGrid() = default;
  explicit TensorGrid(std::vector<Axis> axes);

  [[nodiscard]] int dim() const { return static_cast<int>(axes_.size()); }
  [[nodiscard]] const Axis& axis(int i) const { return axes_[i]; }
  [[nodiscard]] std::size_t size() const { return size_; }

  void unflatten(std::size_t flat, int* multi) const;
  [[nodiscard]] std::size_t flatten(const int* multi) const;
  void node(std::size_t flat, double* out) const;
  [[nodiscard]] Eigen::VectorXd node_vec(std::size_t flat) const;

  // Tensorized trapezoid quadrature weights.
  [[nodiscard]] const std::vector<double>& weights() const;

  [[nodiscard]] bool same_layout(const TensorGrid& other, double tol = 1e-12) const;

 private:
  std::vector<Axis> axes_;
  std::size_t size_ = 0;
  mutable std::vector<double> weights_;
};

// Scalar field sampled on a tensor grid at one time, tagged with the
// evaluation method and its base point.
struct DensityGrid {
  TensorGrid grid;
  double t = 0.0;
  double s = 0.0;
  Eigen::VectorXd y;  // base (freeze) point
  std::vector<double> values;
  std::string method;
  std::string model;
  std::map<std::string, double> meta;

  [[nodiscard]] double mass() const;
  [[nodiscard]] double peak() const;
};

double sup_diff(const DensityGrid& a, const DensityGrid& b);
// One half of the integrated absolute difference.
double tv_distance(const DensityGrid& a, const DensityGrid& b);

// Shortest round-trip decimal formatting (std::to_chars).
std::string format_double(double v);
double parse_double(std::string_view s);

// CSV layout: header "t,x1,..,xn,value", one row per node in flat order.
void write_csv(const DensityGrid& g, std::ostream& out);
void write_csv_file(const DensityGrid& g, const std::string& path);
DensityGrid read_csv(std::istream& in);
DensityGrid read_csv_file(const std::string& path);

}  // namespace hypokernel::grid
