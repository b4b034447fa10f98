#include "hypokernel/oracle.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <stdexcept>

#include "hypokernel/parallel.hpp"

namespace hypokernel::oracle {

namespace {

constexpr int kMaxDim = 8;

inline void philox_round(std::array<std::uint32_t, 4>& c, const std::array<std::uint32_t, 2>& k) {
  const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * c[0];
  const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * c[2];
  c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
       static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
}

inline double to_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (std::uint64_t{hi} << 32) | lo;
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    philox_round(counter, key);
    key[0] += 0x9E3779B9u;
    key[1] += 0xBB67AE85u;
  }
  return counter;
}

std::array<double, 2> normal_pair(std::uint64_t seed, std::uint64_t path, std::uint32_t step,
                                  std::uint32_t lane) {
  const std::array<std::uint32_t, 4> ctr = {step, lane, static_cast<std::uint32_t>(path),
                                            static_cast<std::uint32_t>(path >> 32)};
  const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed),
                                            static_cast<std::uint32_t>(seed >> 32)};
  const auto r = philox4x32_10(ctr, key);
  const double u1 = to_unit(r[0], r[1]) + 0x1.0p-54;  // (0, 1]
  const double u2 = to_unit(r[2], r[3]);              // [0, 1)
  const double rad = std::sqrt(-2.0 * std::log(u1));
  return {rad * std::cos(2.0 * M_PI * u2), rad * std::sin(2.0 * M_PI * u2)};
}

SampleSet euler_maruyama(const SdeSpec& spec) {
  if (spec.vf == nullptr) throw std::invalid_argument("euler_maruyama: missing field set");
  if (spec.steps < 1) throw std::invalid_argument("euler_maruyama: steps must be >= 1");
  if (spec.paths < 1) throw std::invalid_argument("euler_maruyama: paths must be >= 1");
  const int n = spec.vf->dim();
  const int m = spec.vf->num_diffusion();
  if (n > kMaxDim) throw std::invalid_argument("euler_maruyama: dimension too large");
  if (spec.x0.size() != n) throw std::invalid_argument("euler_maruyama: x0 dimension mismatch");

  const double h = spec.t / spec.steps;
  const double noise = std::sqrt(2.0 * h);
  Eigen::MatrixXd terminal(spec.paths, n);
  std::vector<std::uint8_t> ok(static_cast<std::size_t>(spec.paths), 1);

  parallel_for(static_cast<std::size_t>(spec.paths), [&](std::size_t p) {
    double x[kMaxDim], bx[kMaxDim], col[kMaxDim], z[kMaxDim];
    for (int i = 0; i < n; ++i) x[i] = spec.x0[i];
    bool finite = true;
    for (int step = 0; step < spec.steps && finite; ++step) {
      for (int lane = 0; 2 * lane < m; ++lane) {
        const auto pair = normal_pair(spec.seed, p, static_cast<std::uint32_t>(step),
                                      static_cast<std::uint32_t>(lane));
        z[2 * lane] = pair[0];
        if (2 * lane + 1 < m) z[2 * lane + 1] = pair[1];
      }
      spec.vf->eval_g(0, x, bx);
      for (int i = 0; i < n; ++i) bx[i] = x[i] + h * bx[i];
      for (int j = 1; j <= m; ++j) {
        spec.vf->eval_g(j, x, col);
        for (int i = 0; i < n; ++i) bx[i] += noise * z[j - 1] * col[i];
      }
      for (int i = 0; i < n; ++i) {
        x[i] = bx[i];
        finite = finite && std::isfinite(x[i]);
      }
    }
    ok[p] = finite ? 1 : 0;
    for (int i = 0; i < n; ++i) terminal(static_cast<Eigen::Index>(p), i) = finite ? x[i] : 0.0;
  });

  SampleSet out;
  out.requested = spec.paths;
  int kept = 0;
  for (auto flag : ok) kept += flag;
  out.excluded = spec.paths - kept;
  out.points.resize(kept, n);
  int row = 0;
  for (int p = 0; p < spec.paths; ++p)
    if (ok[static_cast<std::size_t>(p)]) out.points.row(row++) = terminal.row(p);
  return out;
}

MomentSummary moments(const SampleSet& s) {
  const int n = s.kept();
  if (n < 2) throw std::invalid_argument("moments: need at least two samples");
  const int d = static_cast<int>(s.points.cols());
  MomentSummary out;
  out.n = n;
  out.mean = s.points.colwise().mean();
  Eigen::MatrixXd centered = s.points.rowwise() - out.mean.transpose();
  out.cov = centered.transpose() * centered / (n - 1);
  out.mean_se.resize(d);
  out.cov_se.resize(d, d);
  for (int i = 0; i < d; ++i) {
    out.mean_se[i] = std::sqrt(out.cov(i, i) / n);
    for (int j = 0; j < d; ++j)
      out.cov_se(i, j) =
          std::sqrt((out.cov(i, i) * out.cov(j, j) + out.cov(i, j) * out.cov(i, j)) / n);
  }
  return out;
}

KdeResult kde_density(const Eigen::MatrixXd& samples, const grid::TensorGrid& g) {
  const auto n = samples.rows();
  const int d = g.dim();
  if (n < 1000) throw std::invalid_argument("kde_density: need at least 1000 samples");
  if (samples.cols() != d) throw std::invalid_argument("kde_density: dimension mismatch");

  KdeResult res;
  res.bandwidth.resize(d);
  const double scott = std::pow(static_cast<double>(n), -1.0 / (d + 4));
  for (int i = 0; i < d; ++i) {
    const double mu = samples.col(i).mean();
    const double sd =
        std::sqrt((samples.col(i).array() - mu).square().sum() / static_cast<double>(n - 1));
    const double cell = g.axis(i).step();
    res.bandwidth[i] = sd * scott;
    if (res.bandwidth[i] < cell) {
      res.bandwidth[i] = cell;
      res.floored = true;
    }
  }

  // Linear binning: each in-box sample spreads unit mass over the 2^d
  // surrounding nodes; serial loop keeps accumulation order fixed.
  std::vector<double> bins(g.size(), 0.0);
  int corners = 1 << d;
  for (Eigen::Index s = 0; s < n; ++s) {
    int base[kMaxDim];
    double frac[kMaxDim];
    bool inside = true;
    for (int i = 0; i < d && inside; ++i) {
      const auto& ax = g.axis(i);
      const double u = (samples(s, i) - ax.lo) / ax.step();
      if (u < 0.0 || u > ax.count - 1) {
        inside = false;
        break;
      }
      base[i] = std::min(static_cast<int>(u), ax.count - 2);
      frac[i] = u - base[i];
    }
    if (!inside) continue;
    for (int c = 0; c < corners; ++c) {
      double w = 1.0;
      int multi[kMaxDim];
      for (int i = 0; i < d; ++i) {
        const int up = (c >> i) & 1;
        multi[i] = base[i] + up;
        w *= up ? frac[i] : 1.0 - frac[i];
      }
      if (w > 0.0) bins[g.flatten(multi)] += w;
    }
  }

  // Separable Gaussian convolution over each axis, truncated at 6h.
  std::vector<double> work(g.size());
  std::vector<double>* src = &bins;
  std::vector<double>* dst = &work;
  for (int axis = 0; axis < d; ++axis) {
    const auto& ax = g.axis(axis);
    const double h = res.bandwidth[axis];
    const int span = static_cast<int>(std::ceil(6.0 * h / ax.step()));
    std::vector<double> tap(static_cast<std::size_t>(span) + 1);
    const double norm = 1.0 / (std::sqrt(2.0 * M_PI) * h);
    for (int j = 0; j <= span; ++j) {
      const double dist = j * ax.step();
      tap[static_cast<std::size_t>(j)] = norm * std::exp(-0.5 * dist * dist / (h * h));
    }
    const auto& in = *src;
    auto& out = *dst;
    parallel_for(g.size(), [&](std::size_t flat) {
      int multi[kMaxDim];
      g.unflatten(flat, multi);
      const int c = multi[axis];
      double acc = 0.0;
      for (int j = -span; j <= span; ++j) {
        const int q = c + j;
        if (q < 0 || q >= ax.count) continue;
        multi[axis] = q;
        acc += tap[static_cast<std::size_t>(std::abs(j))] * in[g.flatten(multi)];
      }
      out[flat] = acc;
    });
    std::swap(src, dst);
  }

  res.density.grid = g;
  res.density.method = "kde";
  res.density.values = *src;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (auto& v : res.density.values) v *= inv_n;
  return res;
}

double GaussianKernel::density(const Eigen::VectorXd& x) const {
  const int n = static_cast<int>(mean.size());
  Eigen::LDLT<Eigen::MatrixXd> ldlt(q);
  const double det = q.determinant();
  if (!(det > 0.0)) throw std::runtime_error("gaussian kernel: covariance not positive definite");
  const Eigen::VectorXd z = x - mean;
  const double quad = z.dot(ldlt.solve(z));
  return std::pow(2.0 * M_PI, -0.5 * n) / std::sqrt(det) * std::exp(-0.5 * quad);
}

GaussianKernel exact_linear_kernel(const Eigen::MatrixXd& b, const Eigen::MatrixXd& a, double t,
                                   const Eigen::VectorXd& x) {
  if (!(t > 0.0)) throw std::invalid_argument("exact_linear_kernel: t must be positive");
  GaussianKernel out;
  out.mean = (b * t).exp() * x;
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
  auto rhs = [&](const Eigen::MatrixXd& m) -> Eigen::MatrixXd {
    return b * m + m * b.transpose() + 2.0 * a;
  };
  const int steps = 256;
  const double h = t / steps;
  for (int k = 0; k < steps; ++k) {
    const Eigen::MatrixXd k1 = rhs(q);
    const Eigen::MatrixXd k2 = rhs(q + 0.5 * h * k1);
    const Eigen::MatrixXd k3 = rhs(q + 0.5 * h * k2);
    const Eigen::MatrixXd k4 = rhs(q + h * k3);
    q += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  out.q = 0.5 * (q + q.transpose());
  return out;
}

GaussianKernel discrete_linear_moments(const Eigen::MatrixXd& b, const Eigen::MatrixXd& a,
                                       double t, int steps, const Eigen::VectorXd& x) {
  if (steps < 1) throw std::invalid_argument("discrete_linear_moments: steps must be >= 1");
  const int n = static_cast<int>(x.size());
  const double h = t / steps;
  const Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n) + h * b;
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd mean = x;
  for (int k = 0; k < steps; ++k) {
    q = m * q * m.transpose() + 2.0 * h * a;
    mean = m * mean;
  }
  return {mean, 0.5 * (q + q.transpose())};
}

LinearModel extract_linear_model(const fields::VectorFieldSet& vf, double radius) {
  const int n = vf.dim();
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
  LinearModel out;
  out.b = fields::jacobian(vf, 0, zero);
  out.a = fields::assemble_diffusion(vf, zero);
  for (int probe = 0; probe < 2 * n + 1; ++probe) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    if (probe > 0) x[(probe - 1) % n] = (probe <= n ? radius : -0.37 * radius);
    const Eigen::VectorXd bx = fields::drift(vf, x);
    if ((bx - out.b * x).lpNorm<Eigen::Infinity>() > 1e-8 * (1.0 + bx.lpNorm<Eigen::Infinity>()))
      throw std::runtime_error("extract_linear_model: drift is not linear");
    const Eigen::MatrixXd ax = fields::assemble_diffusion(vf, x);
    if ((ax - out.a).lpNorm<Eigen::Infinity>() > 1e-8 * (1.0 + out.a.lpNorm<Eigen::Infinity>()))
      throw std::runtime_error("extract_linear_model: diffusion is not constant");
  }
  return out;
}

DeltaFamilyReport delta_family_check(const std::vector<grid::DensityGrid>& family,
                                     const std::function<double(const Eigen::VectorXd&)>& f) {
  if (family.size() < 2) throw std::invalid_argument("delta_family_check: need >= 2 grids");
  std::vector<std::size_t> order(family.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return family[i].t > family[j].t; });

  const auto& first = family[order[0]];
  DeltaFamilyReport rep;
  for (std::size_t idx : order) {
    const auto& dg = family[idx];
    if (!dg.grid.same_layout(first.grid))
      throw std::invalid_argument("delta_family_check: grids do not share the spatial box");
    if ((dg.y - first.y).lpNorm<Eigen::Infinity>() > 1e-12)
      throw std::invalid_argument("delta_family_check: base points differ");
    const auto& w = dg.grid.weights();
    double acc = 0.0;
    for (std::size_t k = 0; k < dg.grid.size(); ++k)
      acc += w[k] * f(dg.grid.node_vec(k)) * dg.values[k];
    rep.t.push_back(dg.t);
    rep.deviation.push_back(std::abs(acc - f(dg.y)));
  }
  rep.decreasing = true;
  for (std::size_t i = 1; i < rep.deviation.size(); ++i)
    rep.decreasing = rep.decreasing &&
                     rep.deviation[i] <= rep.deviation[i - 1] + 1e-12 * (1.0 + rep.deviation[i - 1]);
  rep.final_deviation = rep.deviation.back();
  return rep;
}

}  // namespace hypokernel::oracle
