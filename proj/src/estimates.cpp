#include "hypokernel/estimates.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

#include "hypokernel/kernels.hpp"
#include "hypokernel/parallel.hpp"
#include "hypokernel/parametrix.hpp"

namespace hypokernel::estimates {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Samples below this magnitude are numerically zero for fitting purposes.
constexpr double kZeroSample = 1e-300;

// One derivative pass along `axis`: central stencils inside, second-order
// one-sided rows at the two boundary nodes.
void axis_pass(std::vector<double>& v, const grid::TensorGrid& g, int axis, int order) {
  const int n = g.axis(axis).count;
  const double h = g.axis(axis).step();
  std::size_t stride = 1;
  for (int a = g.dim() - 1; a > axis; --a) stride *= g.axis(a).count;
  const std::size_t lines = g.size() / static_cast<std::size_t>(n);
  std::vector<double> line(n), d(n);
  for (std::size_t li = 0; li < lines; ++li) {
    const std::size_t outer = li / stride;
    const std::size_t inner = li % stride;
    const std::size_t base = outer * stride * static_cast<std::size_t>(n) + inner;
    for (int i = 0; i < n; ++i) line[i] = v[base + stride * i];
    if (order == 1) {
      d[0] = (-3.0 * line[0] + 4.0 * line[1] - line[2]) / (2.0 * h);
      for (int i = 1; i + 1 < n; ++i) d[i] = (line[i + 1] - line[i - 1]) / (2.0 * h);
      d[n - 1] = (3.0 * line[n - 1] - 4.0 * line[n - 2] + line[n - 3]) / (2.0 * h);
    } else {
      d[0] = (2.0 * line[0] - 5.0 * line[1] + 4.0 * line[2] - line[3]) / (h * h);
      for (int i = 1; i + 1 < n; ++i) d[i] = (line[i + 1] - 2.0 * line[i] + line[i - 1]) / (h * h);
      d[n - 1] =
          (2.0 * line[n - 1] - 5.0 * line[n - 2] + 4.0 * line[n - 3] - line[n - 4]) / (h * h);
    }
    for (int i = 0; i < n; ++i) v[base + stride * i] = d[i];
  }
}

// (offset, weight) pairs of the central stencil for d^order/ds^order.
std::vector<std::pair<int, double>> central_stencil(int order, double step) {
  if (order == 0) return {{0, 1.0}};
  if (order == 1) return {{-1, -0.5 / step}, {1, 0.5 / step}};
  const double w = 1.0 / (step * step);
  return {{-1, w}, {0, -2.0 * w}, {1, w}};
}

}  // namespace

std::vector<double> x_derivative(const grid::DensityGrid& p, const std::vector<int>& alpha) {
  const int dim = p.grid.dim();
  if (!alpha.empty() && static_cast<int>(alpha.size()) != dim)
    throw std::invalid_argument("x_derivative: alpha size does not match the grid dimension");
  std::vector<double> v = p.values;
  if (v.size() != p.grid.size())
    throw std::invalid_argument("x_derivative: value count does not match the grid");
  for (int ax = 0; ax < static_cast<int>(alpha.size()); ++ax) {
    int order = alpha[ax];
    if (order < 0) throw std::invalid_argument("x_derivative: negative derivative order");
    if (order == 0) continue;
    if (p.grid.axis(ax).count < order + 2)
      throw std::invalid_argument("x_derivative: stencil exceeds grid on axis " +
                                  std::to_string(ax));
    for (; order >= 2; order -= 2) axis_pass(v, p.grid, ax, 2);
    if (order == 1) axis_pass(v, p.grid, ax, 1);
  }
  return v;
}

grid::DensityGrid derivative_grid(const DensityMaker& make, double t, const Eigen::VectorXd& y,
                                  const DerivativeRequest& req) {
  if (req.j < 0 || req.j > 2)
    throw std::invalid_argument("derivative_grid: time order must be 0, 1 or 2");
  if (req.j > 0 && !(req.dt > 0.0 && t - req.dt > 0.0))
    throw std::invalid_argument("derivative_grid: time step must sit inside (0, t)");
  const int dim = static_cast<int>(y.size());
  if (!req.beta.empty() && static_cast<int>(req.beta.size()) != dim)
    throw std::invalid_argument("derivative_grid: beta size does not match the base point");
  bool has_beta = false;
  for (int b : req.beta) {
    if (b < 0 || b > 2)
      throw std::invalid_argument("derivative_grid: y orders must be 0, 1 or 2 per axis");
    has_beta = has_beta || b > 0;
  }
  if (has_beta && !(req.dy > 0.0))
    throw std::invalid_argument("derivative_grid: y step must be positive");

  const auto tsten = central_stencil(req.j, req.dt);
  std::vector<std::vector<std::pair<int, double>>> ysten;
  for (int b : req.beta) ysten.push_back(central_stencil(b, req.dy));

  grid::DensityGrid out;
  bool first = true;
  // Tensor product of the t stencil with the per-axis y stencils.
  std::vector<std::size_t> idx(ysten.size(), 0);
  for (const auto& [toff, tw] : tsten) {
    for (;;) {
      double w = tw;
      Eigen::VectorXd yy = y;
      for (std::size_t a = 0; a < ysten.size(); ++a) {
        const auto& [yoff, yw] = ysten[a][idx[a]];
        w *= yw;
        yy[static_cast<int>(a)] += yoff * req.dy;
      }
      grid::DensityGrid p = make(t + toff * req.dt, yy);
      if (first) {
        out.grid = p.grid;
        out.s = p.s;
        out.model = p.model;
        out.values.assign(out.grid.size(), 0.0);
        first = false;
      } else if (!p.grid.same_layout(out.grid)) {
        throw std::invalid_argument("derivative_grid: maker returned a different grid layout");
      }
      const std::vector<double> dv = x_derivative(p, req.alpha);
      for (std::size_t k = 0; k < dv.size(); ++k) out.values[k] += w * dv[k];
      // advance the y multi-stencil
      std::size_t a = 0;
      for (; a < ysten.size(); ++a) {
        if (++idx[a] < ysten[a].size()) break;
        idx[a] = 0;
      }
      if (a == ysten.size()) break;
    }
  }
  out.t = t;
  out.y = y;
  out.method = "derivative";
  out.meta["j"] = req.j;
  out.meta["dt"] = req.dt;
  out.meta["dy"] = req.dy;
  for (std::size_t a = 0; a < req.alpha.size(); ++a)
    out.meta["alpha_" + std::to_string(a)] = req.alpha[a];
  for (std::size_t a = 0; a < req.beta.size(); ++a)
    out.meta["beta_" + std::to_string(a)] = req.beta[a];
  return out;
}

EnvelopeSamples envelope_samples(std::vector<grid::DensityGrid> family) {
  if (family.size() < 2)
    throw std::invalid_argument("envelope_samples: need at least two time levels");
  std::sort(family.begin(), family.end(),
            [](const grid::DensityGrid& a, const grid::DensityGrid& b) { return a.t < b.t; });
  EnvelopeSamples s;
  s.grid = family.front().grid;
  s.y = family.front().y;
  for (auto& g : family) {
    if (!g.grid.same_layout(s.grid))
      throw std::invalid_argument("envelope_samples: mixed grid layouts");
    if ((g.y - s.y).norm() > 1e-12)
      throw std::invalid_argument("envelope_samples: mixed base points");
    if (!s.t.empty() && !(g.t > s.t.back()))
      throw std::invalid_argument("envelope_samples: time levels must be distinct");
    s.t.push_back(g.t);
    s.values.push_back(std::move(g.values));
  }
  return s;
}

namespace {

struct LatticeNode {
  double b = 0.0, n = 0.0, m = 0.0;
  double flat = 0.0;   // max - min of log A_l over nonzero levels
  double maxla = 0.0;  // log of the global constant A
  bool ok = false;
  std::vector<double> la;  // log A_l; -inf marks an all-zero level
};

struct Sample {
  double lv;   // log |value|
  double r2t;  // |x - y|^2 / t
  double lx;   // log(1 + |x|)
};

// Per-level max over samples of log|v| + B r2/t - m log(1+|x|); adding
// n log t is separable, so one (B, m) scan serves every n.
std::vector<double> level_base(const std::vector<std::vector<Sample>>& samp, double b, double m) {
  std::vector<double> out(samp.size(), -kInf);
  for (std::size_t l = 0; l < samp.size(); ++l)
    for (const Sample& sp : samp[l]) out[l] = std::max(out[l], sp.lv + b * sp.r2t - m * sp.lx);
  return out;
}

LatticeNode assess(const std::vector<double>& base, const std::vector<double>& logt, double b,
                   double n, double m) {
  LatticeNode nd;
  nd.b = b;
  nd.n = n;
  nd.m = m;
  nd.la.resize(base.size());
  double lo = kInf, hi = -kInf;
  for (std::size_t l = 0; l < base.size(); ++l) {
    if (base[l] == -kInf) {
      nd.la[l] = -kInf;
      continue;
    }
    nd.la[l] = base[l] + n * logt[l];
    lo = std::min(lo, nd.la[l]);
    hi = std::max(hi, nd.la[l]);
  }
  nd.flat = lo <= hi ? hi - lo : 0.0;
  nd.maxla = hi;
  nd.ok = std::isfinite(hi) && hi <= 700.0;
  return nd;
}

// Among profiles within the flatness cut: smallest m, then flattest, then
// smallest A, then largest B; n breaks exact ties deterministically.  Pure
// A-minimization is degenerate (it always drives m up and B down), so the
// profile shape carries the exponent selection.
const LatticeNode* pick(const std::vector<LatticeNode>& nodes, double flat_ratio) {
  double fmin = kInf;
  for (const auto& nd : nodes)
    if (nd.ok) fmin = std::min(fmin, nd.flat);
  if (fmin == kInf) return nullptr;
  const double cut = fmin + std::log(flat_ratio);
  const LatticeNode* best = nullptr;
  for (const auto& nd : nodes) {
    if (!nd.ok || nd.flat > cut) continue;
    if (!best) {
      best = &nd;
      continue;
    }
    if (std::abs(nd.m - best->m) > 1e-9) {
      if (nd.m < best->m) best = &nd;
      continue;
    }
    if (std::abs(nd.flat - best->flat) > 1e-6) {
      if (nd.flat < best->flat) best = &nd;
      continue;
    }
    if (std::abs(nd.maxla - best->maxla) > 1e-6) {
      if (nd.maxla < best->maxla) best = &nd;
      continue;
    }
    if (std::abs(nd.b - best->b) > 1e-9 * best->b) {
      if (nd.b > best->b) best = &nd;
      continue;
    }
    if (nd.n < best->n) best = &nd;
  }
  return best;
}

std::vector<LatticeNode> sweep(const std::vector<std::vector<Sample>>& samp,
                               const std::vector<double>& logt, const std::vector<double>& bs,
                               const std::vector<double>& ns, const std::vector<double>& ms) {
  std::vector<LatticeNode> nodes(bs.size() * ms.size() * ns.size());
  parallel_for(bs.size() * ms.size(), [&](std::size_t bm) {
    const double b = bs[bm / ms.size()];
    const double m = ms[bm % ms.size()];
    const std::vector<double> base = level_base(samp, b, m);
    for (std::size_t ni = 0; ni < ns.size(); ++ni)
      nodes[bm * ns.size() + ni] = assess(base, logt, b, ns[ni], m);
  });
  return nodes;
}

}  // namespace

EnvelopeFit fit_envelope(const EnvelopeSamples& s, const DerivativeRequest& order,
                         const EnvelopeOptions& opt) {
  const std::size_t levels = s.t.size();
  if (levels < 2) throw std::invalid_argument("fit_envelope: need at least two time levels");
  if (s.values.size() != levels)
    throw std::invalid_argument("fit_envelope: level count mismatch");
  if (!(opt.n_step > 0.0) || !(opt.m_step > 0.0) || !(opt.flat_ratio >= 1.0))
    throw std::invalid_argument("fit_envelope: malformed lattice options");
  for (double b : opt.b_lattice)
    if (!(b > 0.0)) throw std::invalid_argument("fit_envelope: B lattice must be positive");
  const std::size_t count = s.grid.size();
  std::vector<double> logt(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    if (!(s.t[l] > 0.0))
      throw std::invalid_argument("fit_envelope: time levels must be positive");
    if (s.values[l].size() != count)
      throw std::invalid_argument("fit_envelope: grid size mismatch at level " + std::to_string(l));
    logt[l] = std::log(s.t[l]);
  }

  std::vector<double> lx(count), r2(count);
  for (std::size_t k = 0; k < count; ++k) {
    const Eigen::VectorXd x = s.grid.node_vec(k);
    lx[k] = std::log1p(x.norm());
    r2[k] = (x - s.y).squaredNorm();
  }

  std::vector<std::vector<Sample>> samp(levels);
  bool any = false;
  for (std::size_t l = 0; l < levels; ++l) {
    for (std::size_t k = 0; k < count; ++k) {
      const double av = std::abs(s.values[l][k]);
      if (!std::isfinite(av)) throw std::invalid_argument("fit_envelope: non-finite sample");
      if (av > kZeroSample) {
        samp[l].push_back({std::log(av), r2[k] / s.t[l], lx[k]});
        any = true;
      }
    }
  }

  EnvelopeFit fit;
  fit.j = order.j;
  fit.alpha = order.alpha;
  fit.beta = order.beta;
  fit.t = s.t;
  fit.samples = levels * count;
  if (!any) {
    fit.zero = true;
    fit.b = 1.0;
    fit.a_level.assign(levels, 0.0);
    fit.b_level.assign(levels, 1.0);
    fit.a_monotone = true;
    return fit;
  }

  std::vector<double> bs = opt.b_lattice;
  if (bs.empty())
    for (int k = -6; k <= 4; ++k) bs.push_back(std::ldexp(1.0, k));
  std::vector<double> ns, ms;
  for (double n = 0.0; n <= opt.n_max + 1e-12; n += opt.n_step) ns.push_back(n);
  for (double m = 0.0; m <= opt.m_max + 1e-12; m += opt.m_step) ms.push_back(m);

  const LatticeNode* w = pick(sweep(samp, logt, bs, ns, ms), opt.flat_ratio);
  if (!w) throw std::runtime_error("fit_envelope: no finite envelope dominates the samples");
  LatticeNode win = *w;

  if (opt.refine) {
    std::vector<double> bf, nf, mf;
    for (int k = -3; k <= 3; ++k) bf.push_back(win.b * std::pow(2.0, k / 4.0));
    for (int k = -3; k <= 3; ++k) nf.push_back(std::max(0.0, win.n + k * opt.n_step / 4.0));
    for (int k = -3; k <= 3; ++k) mf.push_back(std::max(0.0, win.m + k * opt.m_step / 4.0));
    std::vector<LatticeNode> fine = sweep(samp, logt, bf, nf, mf);
    fine.push_back(win);
    const LatticeNode* r = pick(fine, opt.flat_ratio);
    if (r) win = *r;
  }

  fit.b = win.b;
  fit.n = win.n;
  fit.m = win.m;
  fit.n_int = static_cast<int>(std::lround(win.n));
  fit.m_int = static_cast<int>(std::lround(win.m));
  fit.a_level.resize(levels);
  for (std::size_t l = 0; l < levels; ++l)
    fit.a_level[l] = win.la[l] == -kInf ? 0.0 : std::exp(win.la[l]);
  fit.a = std::exp(win.maxla) * (1.0 + 1e-12);
  fit.a_monotone = true;
  for (std::size_t l = 1; l < levels; ++l)
    if (fit.a_level[l] < fit.a_level[l - 1] * (1.0 - 1e-9)) fit.a_monotone = false;

  // Per-level record: largest B whose per-level constant stays within 1e-6
  // of that level's minimum over the B scan (direction reported, not asserted).
  std::vector<double> bscan = bs;
  for (int k = -8; k <= 8; ++k) bscan.push_back(win.b * std::pow(2.0, k / 4.0));
  std::sort(bscan.begin(), bscan.end());
  std::vector<std::vector<double>> scan_la(bscan.size());
  for (std::size_t bi = 0; bi < bscan.size(); ++bi) {
    const std::vector<double> base = level_base(samp, bscan[bi], win.m);
    scan_la[bi].resize(levels);
    for (std::size_t l = 0; l < levels; ++l)
      scan_la[bi][l] = base[l] == -kInf ? -kInf : base[l] + win.n * logt[l];
  }
  fit.b_level.assign(levels, win.b);
  for (std::size_t l = 0; l < levels; ++l) {
    double lmin = kInf;
    for (std::size_t bi = 0; bi < bscan.size(); ++bi) lmin = std::min(lmin, scan_la[bi][l]);
    if (!std::isfinite(lmin)) continue;
    for (std::size_t bi = 0; bi < bscan.size(); ++bi)
      if (scan_la[bi][l] <= lmin + 1e-6) fit.b_level[l] = bscan[bi];
  }

  const double la = std::log(fit.a);
  double margin = kInf;
  for (std::size_t l = 0; l < levels; ++l) {
    for (std::size_t k = 0; k < count; ++k) {
      const double av = std::abs(s.values[l][k]);
      const double bound = std::exp(la + fit.m * lx[k] - fit.n * logt[l] - fit.b * r2[k] / s.t[l]);
      margin = std::min(margin, bound - (av > kZeroSample ? av : 0.0));
    }
  }
  fit.margin = margin;
  return fit;
}

double envelope_bound(const EnvelopeFit& f, double t, const Eigen::VectorXd& x,
                      const Eigen::VectorXd& y) {
  if (!(t > 0.0)) throw std::invalid_argument("envelope_bound: t must be positive");
  if (f.a <= 0.0) return 0.0;
  // Log form: the same arithmetic path as the fit, robust in the far tail.
  const double lb = std::log(f.a) + f.m * std::log1p(x.norm()) - f.n * std::log(t) -
                    f.b * (x - y).squaredNorm() / t;
  return std::exp(lb);
}

MollifierRule mollifier_rule(int dim, int m, int quad_nodes) {
  if (dim < 1 || dim > 8) throw std::invalid_argument("mollifier_rule: dimension out of range");
  if (m < 1) throw std::invalid_argument("mollifier_rule: scale index must be positive");
  if (quad_nodes < 3 || quad_nodes % 2 == 0)
    throw std::invalid_argument("mollifier_rule: quad_nodes must be odd and at least 3");
  double cells = 1.0;
  for (int a = 0; a < dim; ++a) {
    cells *= quad_nodes;
    if (cells > 4e6) throw std::invalid_argument("mollifier_rule: tensor rule too large");
  }
  MollifierRule rule;
  rule.radius = 1.0 / m;
  const double h = 2.0 * rule.radius / (quad_nodes - 1);
  const std::size_t total = static_cast<std::size_t>(cells);
  std::vector<int> multi(dim, 0);
  double sum = 0.0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    Eigen::VectorXd z(dim);
    double s2 = 0.0;
    for (int a = 0; a < dim; ++a) {
      z[a] = -rule.radius + h * multi[a];
      const double u = z[a] * m;
      s2 += u * u;
    }
    if (s2 < 1.0) {
      const double w = std::exp(-1.0 / (1.0 - s2));
      rule.node.push_back(z);
      rule.w.push_back(w);
      sum += w;
    }
    for (int a = dim - 1; a >= 0; --a) {
      if (++multi[a] < quad_nodes) break;
      multi[a] = 0;
    }
  }
  for (double& w : rule.w) w /= sum;
  return rule;
}

ScalarFn mollify_scalar(ScalarFn base, int dim, int m, int quad_nodes) {
  MollifierRule rule = mollifier_rule(dim, m, quad_nodes);
  return [base = std::move(base), rule = std::move(rule)](const Eigen::VectorXd& x) {
    double out = 0.0;
    for (std::size_t k = 0; k < rule.node.size(); ++k) out += rule.w[k] * base(x - rule.node[k]);
    return out;
  };
}

MollifiedFieldSet::MollifiedFieldSet(const fields::VectorFieldSet& base, int m, int quad_nodes)
    : base_(&base), m_(m), rule_(mollifier_rule(base.dim(), m, quad_nodes)) {
  if (base.dim() > 8) throw std::invalid_argument("MollifiedFieldSet: dimension out of range");
}

std::string MollifiedFieldSet::name() const { return base_->name() + "-mollified"; }

std::vector<std::pair<std::string, double>> MollifiedFieldSet::params() const {
  auto p = base_->params();
  p.emplace_back("mollify_m", m_);
  return p;
}

MollifiedModel mollify_coefficients(const fields::VectorFieldSet& base, int m,
                                    const models::Box& box, const MollifyOptions& opt) {
  const int dim = base.dim();
  if (static_cast<int>(box.lo.size()) != dim || static_cast<int>(box.hi.size()) != dim)
    throw std::invalid_argument("mollify_coefficients: box dimension mismatch");
  auto fs = std::make_shared<MollifiedFieldSet>(base, m, opt.quad_nodes);
  MollifiedModel out;
  out.m = m;
  out.smooth = fs;
  out.a = [fs](const Eigen::VectorXd& x) { return fields::assemble_diffusion(*fs, x); };
  out.b = [fs](const Eigen::VectorXd& x) { return fields::drift(*fs, x); };
  out.box = box;
  if (opt.base_box_limited) {
    const double r = 1.0 / m;
    for (int a = 0; a < dim; ++a) {
      out.box.lo[a] += r;
      out.box.hi[a] -= r;
      if (!(out.box.lo[a] < out.box.hi[a]))
        throw std::invalid_argument("mollify_coefficients: box too small for mollifier support");
    }
    out.shrunk = true;
  }
  std::vector<grid::Axis> axes;
  for (int a = 0; a < dim; ++a) axes.push_back({out.box.lo[a], out.box.hi[a], opt.probe_nodes});
  const grid::TensorGrid probe(axes);
  std::vector<double> ea(probe.size(), 0.0), eb(probe.size(), 0.0);
  parallel_for(probe.size(), [&](std::size_t k) {
    const Eigen::VectorXd x = probe.node_vec(k);
    ea[k] = (fields::assemble_diffusion(*fs, x) - fields::assemble_diffusion(base, x))
                .cwiseAbs()
                .maxCoeff();
    eb[k] = (fields::drift(*fs, x) - fields::drift(base, x)).cwiseAbs().maxCoeff();
  });
  out.sup_error_a = *std::max_element(ea.begin(), ea.end());
  out.sup_error_b = *std::max_element(eb.begin(), eb.end());
  return out;
}

CauchyReport density_limit_check(const fields::VectorFieldSet& vf, double t,
                                 const Eigen::VectorXd& y, const LimitOptions& opt) {
  const int dim = vf.dim();
  if (static_cast<int>(y.size()) != dim)
    throw std::invalid_argument("density_limit_check: base point dimension mismatch");
  if (!(t > 0.0)) throw std::invalid_argument("density_limit_check: t must be positive");
  if (opt.ladder.size() < 2)
    throw std::invalid_argument("density_limit_check: ladder needs at least two scales");
  for (std::size_t i = 0; i < opt.ladder.size(); ++i) {
    if (opt.ladder[i] < 1 || (i > 0 && opt.ladder[i] <= opt.ladder[i - 1]))
      throw std::invalid_argument("density_limit_check: ladder must be ascending and positive");
  }

  CauchyReport rep;
  rep.ladder = opt.ladder;
  if (opt.space != nullptr) {
    rep.grid = *opt.space;
  } else {
    const kernels::DiffusionMatrix dm(vf);
    const kernels::FrozenGaussian fz(dm, y);
    if (fz.degenerate())
      throw std::invalid_argument("density_limit_check: degenerate base point needs a grid");
    const double r = fz.truncation_radius(t);
    std::vector<grid::Axis> axes;
    for (int a = 0; a < dim; ++a) axes.push_back({y[a] - r, y[a] + r, opt.space_nodes});
    rep.grid = grid::TensorGrid(axes);
  }

  parametrix::ParametrixOptions po;
  po.order = opt.order;
  po.time_levels = opt.time_levels;
  po.time_cells = opt.time_cells;
  po.space = &rep.grid;

  for (int m : opt.ladder) {
    const MollifiedFieldSet fm(vf, m, opt.quad_nodes);
    grid::DensityGrid p = parametrix::density_approx(fm, y, t, po);
    rep.mass.push_back(p.mass());

    // |(L - L^m) p^m| on interior nodes: coefficient gaps times FD
    // derivatives of the computed density.
    std::vector<std::vector<double>> d2;
    std::vector<std::vector<int>> pairs;
    for (int i = 0; i < dim; ++i) {
      for (int j = i; j < dim; ++j) {
        std::vector<int> alpha(dim, 0);
        alpha[i] += 1;
        alpha[j] += 1;
        d2.push_back(x_derivative(p, alpha));
        pairs.push_back({i, j});
      }
    }
    std::vector<std::vector<double>> d1;
    for (int i = 0; i < dim; ++i) {
      std::vector<int> alpha(dim, 0);
      alpha[i] = 1;
      d1.push_back(x_derivative(p, alpha));
    }
    std::vector<double> res(rep.grid.size(), 0.0);
    parallel_for(rep.grid.size(), [&](std::size_t k) {
      std::vector<int> multi(dim);
      rep.grid.unflatten(k, multi.data());
      for (int a = 0; a < dim; ++a)
        if (multi[a] == 0 || multi[a] == rep.grid.axis(a).count - 1) return;
      const Eigen::VectorXd x = rep.grid.node_vec(k);
      const Eigen::MatrixXd da = fields::assemble_diffusion(vf, x) - fields::assemble_diffusion(fm, x);
      const Eigen::VectorXd db = fields::drift(vf, x) - fields::drift(fm, x);
      double r = 0.0;
      for (std::size_t q = 0; q < pairs.size(); ++q) {
        const int i = pairs[q][0], j = pairs[q][1];
        r += (i == j ? 1.0 : 2.0) * da(i, j) * d2[q][k];
      }
      for (int i = 0; i < dim; ++i) r += db[i] * d1[i][k];
      res[k] = std::abs(r);
    });
    rep.cross_residual.push_back(*std::max_element(res.begin(), res.end()));
    rep.densities.push_back(std::move(p));
  }

  double peak = 0.0;
  for (const auto& p : rep.densities) peak = std::max(peak, p.peak());
  for (std::size_t i = 1; i < rep.densities.size(); ++i)
    rep.sup_diff.push_back(grid::sup_diff(rep.densities[i], rep.densities[i - 1]));
  rep.decreasing = true;
  for (std::size_t i = 1; i < rep.sup_diff.size(); ++i)
    if (rep.sup_diff[i] > rep.sup_diff[i - 1] + 1e-12 * peak) rep.decreasing = false;
  return rep;
}

}  // namespace hypokernel::estimates
