#include "hypokernel/hoermander.hpp"

#include <random>

#include "hypokernel/parallel.hpp"

namespace hypokernel::hoermander {

namespace {

int numerical_rank(const std::vector<BasisElement>& elems, int n, double tol,
                   std::vector<double>* sv_out) {
  if (elems.empty()) {
    if (sv_out) sv_out->clear();
    return 0;
  }
  Eigen::MatrixXd M(n, static_cast<int>(elems.size()));
  for (std::size_t c = 0; c < elems.size(); ++c) M.col(static_cast<int>(c)) = elems[c].vector;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
  const auto& sv = svd.singularValues();
  if (sv_out) sv_out->assign(sv.data(), sv.data() + sv.size());
  if (sv[0] == 0.0) return 0;
  int r = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv[i] > tol * sv[0]) ++r;
  return r;
}

}  // namespace

BracketBasis rank_recursion(const fields::VectorFieldSet& vf, const Eigen::VectorXd& x,
                            const RankOptions& opt) {
  fields::check_smooth(vf, x);
  const int n = vf.dim();
  const int m = vf.num_diffusion();

  BracketBasis out;
  out.x = x;

  // Orthonormal companion of the retained set, used for the growth control.
  std::vector<Eigen::VectorXd> ortho;
  auto try_append = [&](fields::BracketWord w, const Eigen::VectorXd& v, int depth) {
    double norm = v.norm();
    if (norm == 0.0) return false;
    Eigen::VectorXd r = v;
    for (const auto& q : ortho) r -= q.dot(r) * q;
    if (r.norm() <= opt.tol * norm) return false;
    ortho.push_back(r.normalized());
    out.elements.push_back(BasisElement{std::move(w), v, depth});
    return true;
  };

  std::vector<fields::BracketWord> frontier;
  const int seed_lo = opt.mode == Mode::classical ? 1 : 0;
  for (int i = seed_lo; i <= m; ++i) {
    auto w = fields::BracketWord::leaf_word(i);
    Eigen::VectorXd v = fields::evaluate(vf, i, x);
    if (try_append(w, v, 0)) frontier.push_back(out.elements.back().word);
  }
  out.rank = numerical_rank(out.elements, n, opt.tol, &out.singular_values);
  out.rank_by_depth.push_back(out.rank);
  out.depth_reached = 0;
  if (out.rank == n) {
    out.depth_at_full_rank = 0;
    return out;
  }

  const int bg_lo = opt.mode == Mode::classical ? 0 : 1;
  for (int depth = 1; depth <= opt.cap && !frontier.empty(); ++depth) {
    std::vector<fields::BracketWord> next;
    for (const auto& f : frontier) {
      for (int g = bg_lo; g <= m; ++g) {
        fields::BracketWord w = f.wrapped(g);
        Eigen::VectorXd v = fields::evaluate_word(vf, w, x, opt.max_order);
        if (try_append(w, v, depth)) next.push_back(out.elements.back().word);
      }
    }
    out.rank = numerical_rank(out.elements, n, opt.tol, &out.singular_values);
    out.rank_by_depth.push_back(out.rank);
    out.depth_reached = depth;
    if (out.rank == n) {
      out.depth_at_full_rank = depth;
      return out;
    }
    frontier = std::move(next);
  }
  return out;
}

ConditionReport weak_condition_probe(const fields::VectorFieldSet& vf, const models::Box& box,
                                     int samples, const ProbeOptions& opt) {
  if (samples < 1) throw std::invalid_argument("weak_condition_probe: samples must be >= 1");
  if (box.dim() != vf.dim()) throw std::invalid_argument("weak_condition_probe: box dim");
  const int n = vf.dim();

  ConditionReport rep;
  rep.requested = samples;
  rep.mode = opt.rank.mode;
  rep.tol = opt.rank.tol;
  rep.cap = opt.rank.cap;
  rep.depth_histogram.assign(opt.rank.cap + 1, 0);

  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int k = 0; k < samples; ++k) {
    Eigen::VectorXd u = opt.sampler == Sampler::halton
                            ? halton_point(static_cast<std::size_t>(k) + 1, n)
                            : [&] {
                                Eigen::VectorXd r(n);
                                for (int i = 0; i < n; ++i) r[i] = unit(rng);
                                return r;
                              }();
    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i) x[i] = box.lo[i] + (box.hi[i] - box.lo[i]) * u[i];
    rep.points.push_back(x);
  }

  rep.depth_per_point.assign(samples, -2);
  rep.rank_per_point.assign(samples, 0);
  parallel_for(static_cast<std::size_t>(samples), [&](std::size_t k) {
    const Eigen::VectorXd& x = rep.points[k];
    if (vf.lipschitz_only() && !vf.smooth_at(x.data())) return;  // stays skipped
    BracketBasis b = rank_recursion(vf, x, opt.rank);
    rep.rank_per_point[k] = b.rank;
    rep.depth_per_point[k] = b.depth_at_full_rank ? *b.depth_at_full_rank : -1;
  });

  for (int k = 0; k < samples; ++k) {
    int d = rep.depth_per_point[k];
    if (d == -2) {
      ++rep.skipped_non_smooth;
      continue;
    }
    ++rep.evaluated;
    if (d >= 0)
      ++rep.depth_histogram[d];
    else
      ++rep.not_achieved;
  }
  rep.fraction_full_rank =
      rep.evaluated == 0 ? 0.0
                         : static_cast<double>(rep.evaluated - rep.not_achieved) / rep.evaluated;
  return rep;
}

std::vector<int> degeneracy_depth_map(const fields::VectorFieldSet& vf,
                                      const grid::TensorGrid& g, const RankOptions& opt) {
  std::vector<int> depth(g.size(), -1);
  parallel_for(g.size(), [&](std::size_t f) {
    Eigen::VectorXd x = g.node_vec(f);
    if (vf.lipschitz_only() && !vf.smooth_at(x.data())) return;
    BracketBasis b = rank_recursion(vf, x, opt);
    depth[f] = b.depth_at_full_rank ? *b.depth_at_full_rank : -1;
  });
  return depth;
}

Eigen::VectorXd halton_point(std::size_t index, int dim) {
  static constexpr int primes[8] = {2, 3, 5, 7, 11, 13, 17, 19};
  if (dim > 8) throw std::invalid_argument("halton_point: dim too large");
  Eigen::VectorXd u(dim);
  for (int d = 0; d < dim; ++d) {
    double base = primes[d];
    double inv = 1.0 / base;
    double f = inv, r = 0.0;
    for (std::size_t i = index; i > 0; i = i / static_cast<std::size_t>(base)) {
      r += f * static_cast<double>(i % static_cast<std::size_t>(base));
      f *= inv;
    }
    u[d] = r;
  }
  return u;
}

}  // namespace hypokernel::hoermander
