#include "hypokernel/grid.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "hypokernel/simd.hpp"

namespace hypokernel::grid {

TensorGrid::TensorGrid(std::vector<Axis> axes) : axes_(std::move(axes)) {
  size_ = axes_.empty() ? 0 : 1;
  for (const auto& a : axes_) {
    if (a.count < 2 || a.hi <= a.lo) throw std::invalid_argument("TensorGrid: bad axis");
    size_ *= static_cast<std::size_t>(a.count);
  }
}

void TensorGrid::unflatten(std::size_t flat, int* multi) const {
  for (int i = dim() - 1; i >= 0; --i) {
    auto c = static_cast<std::size_t>(axes_[i].count);
    multi[i] = static_cast<int>(flat % c);
    flat /= c;
  }
}

std::size_t TensorGrid::flatten(const int* multi) const {
  std::size_t flat = 0;
  for (int i = 0; i < dim(); ++i)
    flat = flat * static_cast<std::size_t>(axes_[i].count) + static_cast<std::size_t>(multi[i]);
  return flat;
}

void TensorGrid::node(std::size_t flat, double* out) const {
  int multi[8];
  unflatten(flat, multi);
  for (int i = 0; i < dim(); ++i) out[i] = axes_[i].node(multi[i]);
}

Eigen::VectorXd TensorGrid::node_vec(std::size_t flat) const {
  Eigen::VectorXd x(dim());
  node(flat, x.data());
  return x;
}

const std::vector<double>& TensorGrid::weights() const {
  if (weights_.size() == size_) return weights_;
  weights_.assign(size_, 1.0);
  int multi[8];
  for (std::size_t f = 0; f < size_; ++f) {
    unflatten(f, multi);
    double w = 1.0;
    for (int i = 0; i < dim(); ++i) {
      double wi = axes_[i].step();
      if (multi[i] == 0 || multi[i] == axes_[i].count - 1) wi *= 0.5;
      w *= wi;
    }
    weights_[f] = w;
  }
  return weights_;
}

bool TensorGrid::same_layout(const TensorGrid& other, double tol) const {
  if (dim() != other.dim()) return false;
  for (int i = 0; i < dim(); ++i) {
    if (axes_[i].count != other.axes_[i].count) return false;
    if (std::fabs(axes_[i].lo - other.axes_[i].lo) > tol) return false;
    if (std::fabs(axes_[i].hi - other.axes_[i].hi) > tol) return false;
  }
  return true;
}

double DensityGrid::mass() const {
  const auto& w = grid.weights();
  return simd::dot(w.data(), values.data(), values.size());
}

double DensityGrid::peak() const { return simd::max_abs(values.data(), values.size()); }

double sup_diff(const DensityGrid& a, const DensityGrid& b) {
  if (!a.grid.same_layout(b.grid)) throw std::invalid_argument("sup_diff: grid layouts differ");
  return simd::max_abs_diff(a.values.data(), b.values.data(), a.values.size());
}

double tv_distance(const DensityGrid& a, const DensityGrid& b) {
  if (!a.grid.same_layout(b.grid)) throw std::invalid_argument("tv_distance: grid layouts differ");
  const auto& w = a.grid.weights();
  return 0.5 * simd::weighted_abs_diff(w.data(), a.values.data(), b.values.data(),
                                       a.values.size());
}

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::invalid_argument("bad numeric field: " + std::string(s));
  return v;
}

void write_csv(const DensityGrid& g, std::ostream& out) {
  out << "t";
  for (int i = 0; i < g.grid.dim(); ++i) out << ",x" << (i + 1);
  out << ",value\n";
  std::vector<double> x(g.grid.dim());
  for (std::size_t f = 0; f < g.grid.size(); ++f) {
    g.grid.node(f, x.data());
    out << format_double(g.t);
    for (double xi : x) out << ',' << format_double(xi);
    out << ',' << format_double(g.values[f]) << '\n';
  }
}

void write_csv_file(const DensityGrid& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_csv(g, out);
}

DensityGrid read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("csv: empty input");
  int ncols = 1 + static_cast<int>(std::count(line.begin(), line.end(), ','));
  int n = ncols - 2;
  if (n < 1) throw std::invalid_argument("csv: expected t,x...,value header");

  std::vector<std::vector<double>> cols(ncols);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t pos = 0;
    for (int c = 0; c < ncols; ++c) {
      std::size_t next = c + 1 == ncols ? line.size() : line.find(',', pos);
      if (next == std::string::npos) throw std::invalid_argument("csv: short row");
      cols[c].push_back(parse_double(std::string_view(line).substr(pos, next - pos)));
      pos = next + 1;
    }
  }
  std::size_t rows = cols[0].size();
  if (rows == 0) throw std::invalid_argument("csv: no data rows");

  DensityGrid g;
  g.t = cols[0][0];
  for (double tv : cols[0])
    if (tv != g.t) throw std::invalid_argument("csv: multiple t levels in one grid");

  std::vector<Axis> axes(n);
  for (int i = 0; i < n; ++i) {
    std::vector<double> u = cols[i + 1];
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    if (u.size() < 2) throw std::invalid_argument("csv: degenerate axis");
    axes[i] = Axis{u.front(), u.back(), static_cast<int>(u.size())};
  }
  TensorGrid tg(axes);
  if (tg.size() != rows) throw std::invalid_argument("csv: rows do not form a tensor grid");

  g.grid = tg;
  g.values.assign(rows, 0.0);
  g.y = Eigen::VectorXd::Zero(n);
  std::vector<double> x(n);
  for (std::size_t r = 0; r < rows; ++r) {
    int multi[8];
    for (int i = 0; i < n; ++i) {
      double rel = (cols[i + 1][r] - axes[i].lo) / axes[i].step();
      int idx = static_cast<int>(std::lround(rel));
      if (idx < 0 || idx >= axes[i].count || std::fabs(rel - idx) > 1e-6)
        throw std::invalid_argument("csv: node off the uniform grid");
      multi[i] = idx;
    }
    g.values[tg.flatten(multi)] = cols[ncols - 1][r];
  }
  g.method = "csv";
  return g;
}

DensityGrid read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return read_csv(in);
}

}  // namespace hypokernel::grid
