#include "hypokernel/splitting.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "hypokernel/parallel.hpp"

namespace hypokernel::splitting {

namespace {

constexpr int kMaxDim = 8;

void check_box(const models::Box* box, const double* x, int dim) {
  if (box == nullptr) return;
  for (int i = 0; i < dim; ++i)
    if (x[i] < box->lo[i] || x[i] > box->hi[i])
      throw std::runtime_error("flow trajectory left the box");
}

// RK4 sweep shared by flow_map and flow_solve; quad accumulates int g ds.
void rk4_sweep(const VecFn& rhs, int dim, double t, double* x, const FlowOptions& opt,
               const std::function<double(const Eigen::VectorXd&)>* g, double* quad) {
  if (opt.steps < 1) throw std::invalid_argument("flow: steps must be >= 1");
  if (dim > kMaxDim) throw std::invalid_argument("flow: dimension too large");
  const double h = t / opt.steps;
  double k1[kMaxDim], k2[kMaxDim], k3[kMaxDim], k4[kMaxDim], tmp[kMaxDim];
  Eigen::VectorXd probe(dim);
  auto eval_g = [&](const double* p) {
    for (int i = 0; i < dim; ++i) probe[i] = p[i];
    return (*g)(probe);
  };
  check_box(opt.box, x, dim);
  for (int s = 0; s < opt.steps; ++s) {
    double g1 = 0.0, g2 = 0.0, g3 = 0.0, g4 = 0.0;
    rhs(x, k1);
    if (g != nullptr) g1 = eval_g(x);
    for (int i = 0; i < dim; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
    rhs(tmp, k2);
    if (g != nullptr) g2 = eval_g(tmp);
    for (int i = 0; i < dim; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
    rhs(tmp, k3);
    if (g != nullptr) g3 = eval_g(tmp);
    for (int i = 0; i < dim; ++i) tmp[i] = x[i] + h * k3[i];
    rhs(tmp, k4);
    if (g != nullptr) g4 = eval_g(tmp);
    for (int i = 0; i < dim; ++i) {
      x[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      if (!std::isfinite(x[i])) throw std::runtime_error("flow: non-finite state");
    }
    // RK4 on the augmented quadrature component: same stages, 1-2-2-1.
    if (g != nullptr) *quad += (h / 6.0) * (g1 + 2.0 * g2 + 2.0 * g3 + g4);
    check_box(opt.box, x, dim);
  }
}

}  // namespace

Eigen::VectorXd flow_map(const VecFn& rhs, int dim, double t, const Eigen::VectorXd& x,
                         const FlowOptions& opt) {
  if (x.size() != dim) throw std::invalid_argument("flow_map: dimension mismatch");
  double state[kMaxDim];
  for (int i = 0; i < dim; ++i) state[i] = x[i];
  rk4_sweep(rhs, dim, t, state, opt, nullptr, nullptr);
  Eigen::VectorXd out(dim);
  for (int i = 0; i < dim; ++i) out[i] = state[i];
  return out;
}

Eigen::VectorXd flow_map(const fields::VectorFieldSet& vf, int g, double t,
                         const Eigen::VectorXd& x, const FlowOptions& opt) {
  if (g < 0 || g > vf.num_diffusion())
    throw std::invalid_argument("flow_map: generator index out of range");
  VecFn rhs = [&vf, g](const double* p, double* out) { vf.eval_g(g, p, out); };
  return flow_map(rhs, vf.dim(), t, x, opt);
}

double flow_solve(const VecFn& rhs, int dim, const std::function<double(const Eigen::VectorXd&)>& f,
                  const std::function<double(const Eigen::VectorXd&)>& g, double t,
                  const Eigen::VectorXd& x, const FlowOptions& opt) {
  if (x.size() != dim) throw std::invalid_argument("flow_solve: dimension mismatch");
  double state[kMaxDim];
  for (int i = 0; i < dim; ++i) state[i] = x[i];
  double quad = 0.0;
  rk4_sweep(rhs, dim, t, state, opt, &g, &quad);
  Eigen::VectorXd end(dim);
  for (int i = 0; i < dim; ++i) end[i] = state[i];
  return f(end) + quad;
}

CubicInterp::CubicInterp(const grid::TensorGrid& g, const std::vector<double>& values)
    : grid_(&g), values_(&values) {
  if (values.size() != g.size()) throw std::invalid_argument("cubic interp: size mismatch");
  for (int i = 0; i < g.dim(); ++i)
    if (g.axis(i).count < 4) throw std::invalid_argument("cubic interp: need >= 4 nodes per axis");
}

double CubicInterp::operator()(const double* q, bool* exited) const {
  const int d = grid_->dim();
  int base[kMaxDim];
  double w[kMaxDim][4];
  for (int i = 0; i < d; ++i) {
    const auto& ax = grid_->axis(i);
    double u = (q[i] - ax.lo) / ax.step();
    if (u < 0.0 || u > ax.count - 1) {
      if (exited != nullptr) *exited = true;
      u = std::min(std::max(u, 0.0), static_cast<double>(ax.count - 1));
    }
    // Shift the 4-node stencil inward at the edges; the Lagrange weights stay
    // exact for cubics at any local offset f.
    int cell = std::min(std::max(static_cast<int>(u), 1), ax.count - 3);
    const double f = u - cell;
    base[i] = cell;
    w[i][0] = -f * (f - 1.0) * (f - 2.0) / 6.0;
    w[i][1] = (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0;
    w[i][2] = -(f + 1.0) * f * (f - 2.0) / 2.0;
    w[i][3] = (f + 1.0) * f * (f - 1.0) / 6.0;
  }
  double acc = 0.0;
  const int taps = 1 << (2 * d);  // 4^d
  int multi[kMaxDim];
  for (int tap = 0; tap < taps; ++tap) {
    double weight = 1.0;
    for (int i = 0; i < d; ++i) {
      const int off = (tap >> (2 * i)) & 3;
      weight *= w[i][off];
      multi[i] = base[i] + off - 1;
    }
    if (weight != 0.0) acc += weight * (*values_)[grid_->flatten(multi)];
  }
  return acc;
}

double CubicInterp::clamped(const double* q, bool* exited) const {
  const double cubic = (*this)(q, exited);
  const int d = grid_->dim();
  int cell[kMaxDim];
  for (int i = 0; i < d; ++i) {
    const auto& ax = grid_->axis(i);
    const double u = std::min(std::max((q[i] - ax.lo) / ax.step(), 0.0),
                              static_cast<double>(ax.count - 1));
    cell[i] = std::min(static_cast<int>(u), ax.count - 2);
  }
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  int multi[kMaxDim];
  for (int corner = 0; corner < (1 << d); ++corner) {
    for (int i = 0; i < d; ++i) multi[i] = cell[i] + ((corner >> i) & 1);
    const double v = (*values_)[grid_->flatten(multi)];
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return std::min(std::max(cubic, lo), hi);
}

namespace {

// Normalized discrete Gaussian convolution along one axis, clamp-to-edge so
// constants are preserved exactly.
void convolve_axis(const grid::TensorGrid& g, int axis, double sigma, std::vector<double>& in,
                   std::vector<double>& out) {
  const auto& ax = g.axis(axis);
  const int span = std::max(1, static_cast<int>(std::ceil(6.0 * sigma / ax.step())));
  std::vector<double> tap(2 * static_cast<std::size_t>(span) + 1);
  double total = 0.0;
  for (int j = -span; j <= span; ++j) {
    const double dist = j * ax.step();
    tap[static_cast<std::size_t>(j + span)] = std::exp(-0.5 * dist * dist / (sigma * sigma));
    total += tap[static_cast<std::size_t>(j + span)];
  }
  for (auto& v : tap) v /= total;
  parallel_for(g.size(), [&](std::size_t flat) {
    int multi[kMaxDim];
    g.unflatten(flat, multi);
    const int c = multi[axis];
    double acc = 0.0;
    for (int j = -span; j <= span; ++j) {
      multi[axis] = std::min(std::max(c + j, 0), ax.count - 1);
      acc += tap[static_cast<std::size_t>(j + span)] * in[g.flatten(multi)];
    }
    out[flat] = acc;
  });
  std::swap(in, out);
}

}  // namespace

TrotterResult trotter_apply(const TrotterScheme& scheme, std::vector<double> f, double t) {
  if (scheme.vf == nullptr) throw std::invalid_argument("trotter_apply: missing field set");
  if (scheme.m < 1) throw std::invalid_argument("trotter_apply: m must be >= 1");
  const grid::TensorGrid& g = scheme.grid;
  const int d = g.dim();
  if (f.size() != g.size()) throw std::invalid_argument("trotter_apply: grid size mismatch");
  const double tau = t / scheme.m;
  const auto& residual = scheme.leading.residual;
  const fields::VectorFieldSet& vf = *scheme.vf;

  VecFn drift = [&vf, &residual](const double* x, double* out) {
    double full[kMaxDim];
    vf.eval_g(0, x, full);
    for (int i = 0; i < vf.dim(); ++i) out[i] = 0.0;
    for (int j : residual) out[j] = full[j];
  };
  const bool density = scheme.mode == TrotterMode::density;
  VecFn neg_drift = [&drift](const double* x, double* out) {
    double tmp[kMaxDim];
    drift(x, tmp);
    for (int i = 0; i < kMaxDim; ++i) out[i] = -tmp[i];
  };
  auto residual_div = [&vf, &residual, d](const Eigen::VectorXd& x) {
    D1 xx[kMaxDim], out[kMaxDim];
    double div = 0.0;
    for (int j : residual) {
      for (int i = 0; i < d; ++i) xx[i] = D1{x[i], i == j ? 1.0 : 0.0};
      vf.eval_g(0, xx, out);
      div += out[j].b;
    }
    return div;
  };

  TrotterResult res;
  std::vector<double> next(f.size());
  std::vector<std::uint8_t> exited(g.size());
  FlowOptions fopt;
  fopt.steps = scheme.flow_steps;
  for (int sub = 0; sub < scheme.m; ++sub) {
    std::function<double(const Eigen::VectorXd&)> negdiv = [&](const Eigen::VectorXd& p) {
      return -residual_div(p);
    };
    if (!residual.empty()) {
      CubicInterp interp(g, f);
      std::fill(exited.begin(), exited.end(), 0);
      parallel_for(g.size(), [&](std::size_t flat) {
        double x[kMaxDim];
        g.node(flat, x);
        bool out_of_box = false;
        if (!density) {
          rk4_sweep(drift, d, tau, x, fopt, nullptr, nullptr);
          next[flat] = interp.clamped(x, &out_of_box);
        } else {
          double quad = 0.0;
          rk4_sweep(neg_drift, d, tau, x, fopt, &negdiv, &quad);
          next[flat] = interp.clamped(x, &out_of_box) * std::exp(quad);
        }
        exited[flat] = out_of_box ? 1 : 0;
      });
      for (auto e : exited) res.interp_exits += e;
      std::swap(f, next);
    }
    for (std::size_t k = 0; k < scheme.leading.frozen.size(); ++k) {
      const double sigma = std::sqrt(2.0 * scheme.leading.frozen_lambda[k] * tau);
      convolve_axis(g, scheme.leading.frozen[k], sigma, f, next);
    }
  }

  res.d2_max_by_axis.assign(static_cast<std::size_t>(d), 0.0);
  for (int axis = 0; axis < d; ++axis) {
    const auto& ax = g.axis(axis);
    const double inv_h2 = 1.0 / (ax.step() * ax.step());
    double best = 0.0;
    int multi[kMaxDim];
    for (std::size_t flat = 0; flat < g.size(); ++flat) {
      g.unflatten(flat, multi);
      if (multi[axis] == 0 || multi[axis] == ax.count - 1) continue;
      multi[axis] -= 1;
      const double lo = f[g.flatten(multi)];
      multi[axis] += 2;
      const double hi = f[g.flatten(multi)];
      multi[axis] -= 1;
      best = std::max(best, std::abs((hi - 2.0 * f[flat] + lo) * inv_h2));
    }
    res.d2_max_by_axis[static_cast<std::size_t>(axis)] = best;
  }
  res.values = std::move(f);
  return res;
}

grid::DensityGrid trotter_density(const TrotterScheme& scheme, const Eigen::VectorXd& y,
                                  double t) {
  const grid::TensorGrid& g = scheme.grid;
  const int d = g.dim();
  if (y.size() != d) throw std::invalid_argument("trotter_density: dimension mismatch");

  // One-cell Gaussian bump at y, renormalized to discrete mass 1.
  std::vector<double> bump(g.size());
  parallel_for(g.size(), [&](std::size_t flat) {
    double x[kMaxDim];
    g.node(flat, x);
    double v = 1.0;
    for (int i = 0; i < d; ++i) {
      const double w = g.axis(i).step();
      const double z = (x[i] - y[i]) / w;
      v *= std::exp(-0.5 * z * z) / (std::sqrt(2.0 * M_PI) * w);
    }
    bump[flat] = v;
  });
  const std::vector<double> qw = g.weights();
  double mass = 0.0;
  for (std::size_t k = 0; k < bump.size(); ++k) mass += qw[k] * bump[k];
  if (mass <= 0.0) throw std::invalid_argument("trotter_density: seed point too close to the box edge");
  for (auto& v : bump) v /= mass;

  TrotterResult res = trotter_apply(scheme, std::move(bump), t);

  grid::DensityGrid out;
  out.grid = g;
  out.t = t;
  out.s = 0.0;
  out.y = y;
  out.values = std::move(res.values);
  out.method = "trotter";
  out.model = scheme.vf->name();
  out.meta["m"] = scheme.m;
  out.meta["flow_steps"] = scheme.flow_steps;
  out.meta["interp_exits"] = res.interp_exits;
  for (int i = 0; i < d; ++i)
    out.meta["d2_axis" + std::to_string(i)] = res.d2_max_by_axis[static_cast<std::size_t>(i)];
  out.meta["mass"] = out.mass();
  return out;
}

WalkResult square_walk(const fields::VectorFieldSet& vf, int i, int j, const Eigen::VectorXd& x,
                       double delta, int steps) {
  if (i < 0 || i > vf.num_diffusion() || j < 0 || j > vf.num_diffusion())
    throw std::invalid_argument("square_walk: generator index out of range");
  FlowOptions opt;
  opt.steps = steps;
  Eigen::VectorXd p = flow_map(vf, j, delta, x, opt);
  p = flow_map(vf, i, delta, p, opt);
  p = flow_map(vf, j, -delta, p, opt);
  p = flow_map(vf, i, -delta, p, opt);
  WalkResult out;
  out.endpoint = p;
  out.estimate = (p - x) / (delta * delta);
  return out;
}

}  // namespace hypokernel::splitting
