#include "hypokernel/parametrix.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>

#include "hypokernel/parallel.hpp"

namespace hypokernel::parametrix {

namespace {

// Unit-interval graded midpoint pattern, scaled by the caller.
void unit_time_pattern(int levels, int cells, std::vector<double>& node, std::vector<double>& wgt) {
  std::vector<double> edge;  // ascending band edges on [0, 1/2]
  edge.push_back(0.0);
  for (int k = levels; k >= 1; --k) edge.push_back(std::ldexp(1.0, -k - 1));
  edge.push_back(0.5);
  auto push_band = [&](double lo, double hi) {
    const double h = (hi - lo) / cells;
    for (int c = 0; c < cells; ++c) {
      node.push_back(lo + (c + 0.5) * h);
      wgt.push_back(h);
    }
  };
  for (std::size_t i = 0; i + 1 < edge.size(); ++i) push_band(edge[i], edge[i + 1]);
  const std::size_t half = node.size();
  for (std::size_t i = half; i-- > 0;) {
    node.push_back(1.0 - node[i]);
    wgt.push_back(wgt[i]);
  }
}

std::vector<Eigen::VectorXd> cache_nodes(const grid::TensorGrid& g) {
  std::vector<Eigen::VectorXd> nodes(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) nodes[k] = g.node_vec(k);
  return nodes;
}

}  // namespace

SpaceTimeGrid::SpaceTimeGrid(double s_, double t_, int levels, int cells,
                             grid::TensorGrid space_grid)
    : s(s_), t(t_), space(std::move(space_grid)) {
  if (!(t > s)) throw std::invalid_argument("space-time grid: requires t > s");
  if (levels < 1 || cells < 1)
    throw std::invalid_argument("space-time grid: levels and cells must be >= 1");
  std::vector<double> un, uw;
  unit_time_pattern(levels, cells, un, uw);
  sigma.resize(un.size());
  weight.resize(uw.size());
  double total = 0.0;
  for (std::size_t i = 0; i < un.size(); ++i) {
    sigma[i] = s + (t - s) * un[i];
    weight[i] = (t - s) * uw[i];
    total += weight[i];
    if (!(weight[i] > 0.0) || !(sigma[i] > s) || !(sigma[i] < t) ||
        (i > 0 && !(sigma[i] > sigma[i - 1])))
      throw std::logic_error("space-time grid: malformed graded rule");
  }
  if (std::abs(total - (t - s)) > 1e-12 * std::max(1.0, t - s))
    throw std::logic_error("space-time grid: weights do not sum to t - s");
}

N0Family::N0Family(const kernels::DiffusionMatrix& a, const grid::TensorGrid& g) {
  member_.resize(g.size());
  for (std::size_t k = 0; k < g.size(); ++k)
    member_[k] = std::make_unique<kernels::FrozenGaussian>(a, g.node_vec(k));
}

double residual_kernel(const kernels::DiffusionMatrix& a, const fields::VectorFieldSet& vf,
                       const kernels::FrozenGaussian& n0, double t, const Eigen::VectorXd& x,
                       double s) {
  if (!(t > s)) throw std::invalid_argument("residual_kernel: requires t > s");
  if (n0.degenerate()) return 0.0;
  const Eigen::MatrixXd diff = a.a(n0.y()) - a.a(x);
  const Eigen::MatrixXd hess = n0.hess_x(t, x, s);
  const Eigen::VectorXd grad = n0.grad_x(t, x, s);
  const Eigen::VectorXd b = fields::drift(vf, x);
  return (diff.array() * hess.array()).sum() + b.dot(grad);
}

TimeSpace volterra_step(const SpaceTimeGrid& g, const kernels::DiffusionMatrix& a,
                        const fields::VectorFieldSet& vf, const N0Family& fam,
                        const TimeSpace& prev) {
  const std::size_t tn = g.sigma.size();
  const std::size_t xn = g.space.size();
  if (prev.size() != tn) throw std::invalid_argument("volterra_step: time layout mismatch");
  for (const auto& row : prev)
    if (row.size() != xn) throw std::invalid_argument("volterra_step: space layout mismatch");
  const std::vector<double> wsp = g.space.weights();
  const std::vector<Eigen::VectorXd> nodes = cache_nodes(g.space);

  TimeSpace out(tn, std::vector<double>(xn, 0.0));
  std::atomic<bool> bad{false};
  parallel_for(tn * xn, [&](std::size_t idx) {
    const std::size_t b = idx / xn;
    const std::size_t k = idx % xn;
    const Eigen::VectorXd& x = nodes[k];
    double acc = 0.0;
    for (std::size_t aa = 0; aa < b; ++aa) {
      const double tau = g.sigma[b] - g.sigma[aa];
      double inner = 0.0;
      for (std::size_t q = 0; q < xn; ++q) {
        if (fam.degenerate(q)) continue;  // measure-zero degenerate set
        const double pv = prev[aa][q];
        if (pv == 0.0) continue;
        const double r = fam.at(q).truncation_radius(tau);
        if ((x - nodes[q]).squaredNorm() > r * r) continue;
        inner += wsp[q] * residual_kernel(a, vf, fam.at(q), g.sigma[b], x, g.sigma[aa]) * pv;
      }
      acc += g.weight[aa] * inner;
    }
    if (!std::isfinite(acc)) bad.store(true);
    out[b][k] = acc;
  });
  if (bad.load())
    throw std::runtime_error("volterra_step: non-finite quadrature (grid too coarse near the"
                             " time singularity)");
  return out;
}

grid::DensityGrid density_approx(const fields::VectorFieldSet& vf, const Eigen::VectorXd& y,
                                 double t, const ParametrixOptions& opt) {
  if (y.size() != vf.dim()) throw std::invalid_argument("density_approx: dimension mismatch");
  if (!(t > opt.s)) throw std::invalid_argument("density_approx: requires t > s");
  if (opt.order < 0) throw std::invalid_argument("density_approx: order must be >= 0");

  kernels::DiffusionMatrix dm(vf);
  kernels::FrozenGaussian n0y(dm, y);

  grid::TensorGrid space;
  if (opt.space != nullptr) {
    space = *opt.space;
    if (space.dim() != vf.dim()) throw std::invalid_argument("density_approx: grid dimension");
  } else {
    if (n0y.degenerate())
      throw std::invalid_argument(
          "density_approx: degenerate freeze point needs an explicit grid");
    const double r = n0y.truncation_radius(t - opt.s);
    std::vector<grid::Axis> axes;
    for (int i = 0; i < vf.dim(); ++i)
      axes.push_back(grid::Axis{y[i] - r, y[i] + r, opt.space_nodes});
    space = grid::TensorGrid(axes);
  }

  SpaceTimeGrid st(opt.s, t, opt.time_levels, opt.time_cells, space);
  const std::size_t tn = st.sigma.size();
  const std::size_t xn = space.size();
  const std::vector<Eigen::VectorXd> nodes = cache_nodes(space);

  grid::DensityGrid out;
  out.grid = space;
  out.t = t;
  out.s = opt.s;
  out.y = y;
  out.method = "parametrix-order-" + std::to_string(opt.order);
  out.model = vf.name();
  out.meta["order"] = opt.order;
  out.meta["time_nodes"] = static_cast<double>(tn);

  out.values.resize(xn);
  parallel_for(xn, [&](std::size_t k) { out.values[k] = n0y.value(t, nodes[k], opt.s); });

  if (opt.order >= 1 && !n0y.degenerate()) {
    N0Family fam(dm, space);

    TimeSpace cur(tn, std::vector<double>(xn, 0.0));
    parallel_for(tn * xn, [&](std::size_t idx) {
      const std::size_t a = idx / xn;
      const std::size_t k = idx % xn;
      cur[a][k] = residual_kernel(dm, vf, n0y, st.sigma[a], nodes[k], opt.s);
    });

    TimeSpace phi(tn, std::vector<double>(xn, 0.0));
    double prev_norm = 0.0;
    double sign = -1.0;  // phi = sum_m (-1)^m (LN0)_m
    for (int m = 1; m <= opt.order; ++m) {
      if (m > 1) {
        if (prev_norm == 0.0) break;  // series terminated exactly
        cur = volterra_step(st, dm, vf, fam, cur);
      }
      double norm = 0.0;
      for (const auto& row : cur)
        for (double v : row) norm = std::max(norm, std::abs(v));
      out.meta["term_norm_" + std::to_string(m)] = norm;
      if (m > 1 && prev_norm > 0.0 && norm >= prev_norm)
        throw std::runtime_error("density_approx: series term norms non-decreasing at order " +
                                 std::to_string(m) + "; reduce t");
      for (std::size_t a = 0; a < tn; ++a)
        for (std::size_t k = 0; k < xn; ++k) phi[a][k] += sign * cur[a][k];
      prev_norm = norm;
      sign = -sign;
    }

    const std::vector<double> wsp = space.weights();
    parallel_for(xn, [&](std::size_t k) {
      const Eigen::VectorXd& x = nodes[k];
      double corr = 0.0;
      for (std::size_t a = 0; a < tn; ++a) {
        const double tau = t - st.sigma[a];
        double inner = 0.0;
        for (std::size_t q = 0; q < xn; ++q) {
          if (fam.degenerate(q)) continue;
          const double pv = phi[a][q];
          if (pv == 0.0) continue;
          const double r = fam.at(q).truncation_radius(tau);
          if ((x - nodes[q]).squaredNorm() > r * r) continue;
          inner += wsp[q] * fam.at(q).value(t, x, st.sigma[a]) * pv;
        }
        corr += st.weight[a] * inner;
      }
      out.values[k] += corr;
    });
  }

  out.meta["mass"] = out.mass();
  return out;
}

grid::DensityGrid blend_local_densities(const grid::DensityGrid& pa, const grid::DensityGrid& pb,
                                        const std::function<double(const Eigen::VectorXd&)>& phi1,
                                        const std::function<double(const Eigen::VectorXd&)>& phi2) {
  const int d = pa.grid.dim();
  if (pb.grid.dim() != d) throw std::invalid_argument("blend: dimension mismatch");
  if (std::abs(pa.t - pb.t) > 1e-12 * std::max(1.0, std::abs(pa.t)) ||
      std::abs(pa.s - pb.s) > 1e-12 * std::max(1.0, std::abs(pa.s)))
    throw std::invalid_argument("blend: patches at different times");

  // Patches must live on one lattice: equal steps, integer offset, overlap.
  std::vector<grid::Axis> axes;
  for (int i = 0; i < d; ++i) {
    const auto& A = pa.grid.axis(i);
    const auto& B = pb.grid.axis(i);
    const double h = A.step();
    if (std::abs(B.step() - h) > 1e-9 * h)
      throw std::invalid_argument("blend: grid steps differ");
    const double off = (B.lo - A.lo) / h;
    if (std::abs(off - std::round(off)) > 1e-6)
      throw std::invalid_argument("blend: grids not on a common lattice");
    if (B.lo > A.hi + 1e-9 * h || A.lo > B.hi + 1e-9 * h)
      throw std::invalid_argument("blend: empty overlap");
    const double lo = std::min(A.lo, B.lo);
    const double hi = std::max(A.hi, B.hi);
    axes.push_back(grid::Axis{lo, hi, static_cast<int>(std::round((hi - lo) / h)) + 1});
  }
  grid::TensorGrid uni(axes);

  auto patch_value = [d](const grid::DensityGrid& p, const Eigen::VectorXd& x, bool* inside) {
    int multi[8];
    for (int i = 0; i < d; ++i) {
      const auto& ax = p.grid.axis(i);
      const double u = (x[i] - ax.lo) / ax.step();
      const int idx = static_cast<int>(std::round(u));
      if (idx < 0 || idx >= ax.count || std::abs(u - idx) > 1e-6) {
        *inside = false;
        return 0.0;
      }
      multi[i] = idx;
    }
    *inside = true;
    return p.values[p.grid.flatten(multi)];
  };

  grid::DensityGrid out;
  out.grid = uni;
  out.t = pa.t;
  out.s = pa.s;
  out.y = pa.y;
  out.method = pa.method;
  out.model = pa.model;
  out.values.resize(uni.size());
  for (std::size_t k = 0; k < uni.size(); ++k) {
    const Eigen::VectorXd x = uni.node_vec(k);
    const double p1 = phi1(x);
    const double p2 = phi2(x);
    if (std::abs(p1 + p2 - 1.0) > 1e-8)
      throw std::invalid_argument("blend: partition does not sum to 1 on the union");
    bool ina = false, inb = false;
    const double va = patch_value(pa, x, &ina);
    const double vb = patch_value(pb, x, &inb);
    out.values[k] = p1 * (ina ? va : 0.0) + p2 * (inb ? vb : 0.0);
  }

  const double raw = out.mass();
  if (!(raw > 0.0)) throw std::runtime_error("blend: blended mass not positive");
  const double target = std::min({pa.mass(), pb.mass(), 1.0});
  const double c = target / raw;
  for (auto& v : out.values) v *= c;
  out.meta["blend_c"] = c;
  out.meta["patches"] = 2.0;
  out.meta["mass"] = out.mass();
  return out;
}

}  // namespace hypokernel::parametrix
