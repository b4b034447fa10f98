#include "hypokernel/fields.hpp"

namespace hypokernel::fields {

std::string BracketWord::to_string() const {
  std::string s = "V" + std::to_string(leaf);
  for (int g : gens) s = "[V" + std::to_string(g) + "," + s + "]";
  return s;
}

void check_smooth(const VectorFieldSet& vf, const Eigen::VectorXd& x) {
  if (vf.lipschitz_only() && !vf.smooth_at(x.data()))
    throw std::domain_error("derivative requested outside the declared smooth set");
}

Eigen::VectorXd evaluate(const VectorFieldSet& vf, int i, const Eigen::VectorXd& x) {
  Eigen::VectorXd out(vf.dim());
  vf.eval_g(i, x.data(), out.data());
  return out;
}

Eigen::MatrixXd jacobian(const VectorFieldSet& vf, int i, const Eigen::VectorXd& x) {
  check_smooth(vf, x);
  const int n = vf.dim();
  Eigen::MatrixXd J(n, n);
  std::vector<D1> xx(n), col(n);
  for (int c = 0; c < n; ++c) {
    for (int k = 0; k < n; ++k) xx[k] = D1(x[k], k == c ? 1.0 : 0.0);
    vf.eval_g(i, xx.data(), col.data());
    for (int r = 0; r < n; ++r) J(r, c) = col[r].b;
  }
  return J;
}

Eigen::VectorXd lie_bracket(const VectorFieldSet& vf, const BracketWord& f, const BracketWord& g,
                            const Eigen::VectorXd& x) {
  check_smooth(vf, x);
  const int n = vf.dim();
  std::vector<double> fv(n), gv(n);
  eval_word_t<double>(vf, f, f.depth(), x.data(), fv.data());
  eval_word_t<double>(vf, g, g.depth(), x.data(), gv.data());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  std::vector<D1> xx(n), col(n);
  for (int c = 0; c < n; ++c) {
    for (int k = 0; k < n; ++k) xx[k] = D1(x[k], k == c ? 1.0 : 0.0);
    eval_word_t<D1>(vf, g, g.depth(), xx.data(), col.data());
    for (int r = 0; r < n; ++r) out[r] += col[r].b * fv[c];
    eval_word_t<D1>(vf, f, f.depth(), xx.data(), col.data());
    for (int r = 0; r < n; ++r) out[r] -= col[r].b * gv[c];
  }
  return out;
}

Eigen::VectorXd lie_bracket(const VectorFieldSet& vf, int i, int j, const Eigen::VectorXd& x) {
  return lie_bracket(vf, BracketWord::leaf_word(i), BracketWord::leaf_word(j), x);
}

Eigen::VectorXd evaluate_word(const VectorFieldSet& vf, const BracketWord& w,
                              const Eigen::VectorXd& x, int max_order) {
  if (w.depth() > max_order || w.depth() > kMaxDualDepth)
    throw std::domain_error("evaluate_word: word depth exceeds configured derivative order");
  if (w.depth() > 0) check_smooth(vf, x);
  Eigen::VectorXd out(vf.dim());
  eval_word_t<double>(vf, w, w.depth(), x.data(), out.data());
  return out;
}

Eigen::MatrixXd assemble_diffusion(const VectorFieldSet& vf, const Eigen::VectorXd& x) {
  const int n = vf.dim();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd col(n);
  for (int i = 1; i <= vf.num_diffusion(); ++i) {
    vf.eval_g(i, x.data(), col.data());
    a.noalias() += col * col.transpose();
  }
  return a;
}

Eigen::VectorXd drift(const VectorFieldSet& vf, const Eigen::VectorXd& x) {
  return evaluate(vf, 0, x);
}

}  // namespace hypokernel::fields
