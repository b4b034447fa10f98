#pragma once

#include <Eigen/Dense>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "hypokernel/dual.hpp"

// Vector-field sets V_0 (drift), V_1..V_m (diffusion columns) with nested
// dual-arithmetic derivatives, Lie brackets and iterated bracket words.
// Bracket convention, fixed across the artifact:
//   [f, g](x) = Dg(x) f(x) - Df(x) g(x).

namespace hypokernel::fields {

// Iterated bracket word: w0 = V_leaf, w_k = [V_{gens[k-1]}, w_{k-1}].
struct BracketWord {
  int leaf = 0;
  std::vector<int> gens;  // innermost wrapper first

  static BracketWord leaf_word(int i) { return BracketWord{i, {}}; }
  [[nodiscard]] BracketWord wrapped(int g) const {
    BracketWord w = *this;
    w.gens.push_back(g);
    return w;
  }
  [[nodiscard]] int depth() const { return static_cast<int>(gens.size()); }
  [[nodiscard]] std::string to_string() const;
};

class VectorFieldSet {
 public:
  virtual ~VectorFieldSet() = default;

  [[nodiscard]] virtual int dim() const = 0;
  [[nodiscard]] virtual int num_diffusion() const = 0;  // m
  [[nodiscard]] int num_generators() const { return num_diffusion() + 1; }
  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual std::vector<std::pair<std::string, double>> params() const { return {}; }

  // Coefficients that are merely Lipschitz declare their smooth set; bracket
  // and derivative evaluation off it is an error, not a NaN.
  [[nodiscard]] virtual bool lipschitz_only() const { return false; }
  [[nodiscard]] virtual bool smooth_at(const double* /*x*/) const { return true; }

  // Generator evaluation at every dual level; index 0 is the drift.
  virtual void eval_g(int i, const double* x, double* out) const = 0;
  virtual void eval_g(int i, const D1* x, D1* out) const = 0;
  virtual void eval_g(int i, const D2* x, D2* out) const = 0;
  virtual void eval_g(int i, const D3* x, D3* out) const = 0;
  virtual void eval_g(int i, const D4* x, D4* out) const = 0;
  virtual void eval_g(int i, const D5* x, D5* out) const = 0;
  virtual void eval_g(int i, const D6* x, D6* out) const = 0;
};

template <class Derived>
class FieldSetBase : public VectorFieldSet {
 public:
  void eval_g(int i, const double* x, double* out) const override { impl(i, x, out); }
  void eval_g(int i, const D1* x, D1* out) const override { impl(i, x, out); }
  void eval_g(int i, const D2* x, D2* out) const override { impl(i, x, out); }
  void eval_g(int i, const D3* x, D3* out) const override { impl(i, x, out); }
  void eval_g(int i, const D4* x, D4* out) const override { impl(i, x, out); }
  void eval_g(int i, const D5* x, D5* out) const override { impl(i, x, out); }
  void eval_g(int i, const D6* x, D6* out) const override { impl(i, x, out); }

 private:
  template <class T>
  void impl(int i, const T* x, T* out) const {
    if (i < 0 || i >= num_generators()) throw std::out_of_range("generator index");
    static_cast<const Derived*>(this)->template eval_impl<T>(i, x, out);
  }
};

// Evaluates the word truncated to depth k at a point of any dual level.
template <class T>
void eval_word_t(const VectorFieldSet& vf, const BracketWord& w, int k, const T* x, T* out) {
  const int n = vf.dim();
  if (k == 0) {
    vf.eval_g(w.leaf, x, out);
    return;
  }
  if constexpr (dual_depth_v<T> + 1 > kMaxDualDepth) {
    throw std::domain_error("evaluate_word: configured derivative order exhausted");
  } else {
    using DT = Dual<T>;
    std::vector<T> sub(n), vg(n);
    eval_word_t<T>(vf, w, k - 1, x, sub.data());
    vf.eval_g(w.gens[k - 1], x, vg.data());
    for (int i = 0; i < n; ++i) out[i] = T(0.0);
    std::vector<DT> xx(n), col(n);
    for (int c = 0; c < n; ++c) {
      for (int i = 0; i < n; ++i) xx[i] = DT(x[i], T(i == c ? 1.0 : 0.0));
      eval_word_t<DT>(vf, w, k - 1, xx.data(), col.data());
      for (int i = 0; i < n; ++i) out[i] += col[i].b * vg[c];
      vf.eval_g(w.gens[k - 1], xx.data(), col.data());
      for (int i = 0; i < n; ++i) out[i] = out[i] - col[i].b * sub[c];
    }
  }
}

void check_smooth(const VectorFieldSet& vf, const Eigen::VectorXd& x);

Eigen::VectorXd evaluate(const VectorFieldSet& vf, int i, const Eigen::VectorXd& x);
Eigen::MatrixXd jacobian(const VectorFieldSet& vf, int i, const Eigen::VectorXd& x);

// [w_f, w_g](x) for arbitrary words; generator convenience overload below.
Eigen::VectorXd lie_bracket(const VectorFieldSet& vf, const BracketWord& f, const BracketWord& g,
                            const Eigen::VectorXd& x);
Eigen::VectorXd lie_bracket(const VectorFieldSet& vf, int i, int j, const Eigen::VectorXd& x);

Eigen::VectorXd evaluate_word(const VectorFieldSet& vf, const BracketWord& w,
                              const Eigen::VectorXd& x, int max_order = 4);

// a(x) = sigma sigma^T from the diffusion columns.
Eigen::MatrixXd assemble_diffusion(const VectorFieldSet& vf, const Eigen::VectorXd& x);
Eigen::VectorXd drift(const VectorFieldSet& vf, const Eigen::VectorXd& x);

}  // namespace hypokernel::fields
