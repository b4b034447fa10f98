#include "hypokernel/models.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace hypokernel::models {

namespace {

using fields::FieldSetBase;

double take(const std::map<std::string, double>& p, const std::string& key, double def) {
  auto it = p.find(key);
  return it == p.end() ? def : it->second;
}

void reject_unknown(const std::map<std::string, double>& p,
                    std::initializer_list<const char*> known) {
  for (const auto& [k, v] : p) {
    bool ok = false;
    for (const char* kk : known)
      if (k == kk) ok = true;
    if (!ok) throw std::invalid_argument("unknown model parameter: " + k);
  }
}

class KolmogorovModel final : public FieldSetBase<KolmogorovModel> {
 public:
  KolmogorovModel(double lambda2, double mu1)
      : lambda2_(lambda2), mu1_(mu1), s_(std::sqrt(lambda2)) {
    if (lambda2 <= 0.0) throw std::invalid_argument("kolmogorov: lambda2 must be positive");
  }
  int dim() const override { return 2; }
  int num_diffusion() const override { return 1; }
  std::string name() const override { return "kolmogorov"; }
  std::vector<std::pair<std::string, double>> params() const override {
    return {{"lambda2", lambda2_}, {"mu1", mu1_}};
  }
  template <class T>
  void eval_impl(int i, const T* x, T* out) const {
    if (i == 0) {
      out[0] = x[1] * (-mu1_);
      out[1] = T(0.0);
    } else {
      out[0] = T(0.0);
      out[1] = T(s_);
    }
  }

 private:
  double lambda2_, mu1_, s_;
};

class GrushinModel final : public FieldSetBase<GrushinModel> {
 public:
  int dim() const override { return 2; }
  int num_diffusion() const override { return 2; }
  std::string name() const override { return "grushin"; }
  template <class T>
  void eval_impl(int i, const T* x, T* out) const {
    out[0] = T(0.0);
    out[1] = T(0.0);
    if (i == 1) out[0] = T(1.0);
    if (i == 2) out[1] = x[0];
  }
};

class EllipticOuModel final : public FieldSetBase<EllipticOuModel> {
 public:
  EllipticOuModel(double kappa, double s1, double s2) : kappa_(kappa), s1_(s1), s2_(s2) {}
  int dim() const override { return 2; }
  int num_diffusion() const override { return 2; }
  std::string name() const override { return "elliptic_ou"; }
  std::vector<std::pair<std::string, double>> params() const override {
    return {{"kappa", kappa_}, {"s1", s1_}, {"s2", s2_}};
  }
  template <class T>
  void eval_impl(int i, const T* x, T* out) const {
    switch (i) {
      case 0:
        out[0] = x[0] * (-kappa_);
        out[1] = x[1] * (-kappa_);
        break;
      case 1:
        out[0] = T(s1_);
        out[1] = T(0.0);
        break;
      default:
        out[0] = T(0.0);
        out[1] = T(s2_);
    }
  }

 private:
  double kappa_, s1_, s2_;
};

class WeakLipschitzModel final : public FieldSetBase<WeakLipschitzModel> {
 public:
  WeakLipschitzModel(double c0, double c1) : c0_(c0), c1_(c1) {
    if (c0 <= 0.0) throw std::invalid_argument("weak_lipschitz: c0 must be positive");
  }
  int dim() const override { return 1; }
  int num_diffusion() const override { return 1; }
  std::string name() const override { return "weak_lipschitz"; }
  std::vector<std::pair<std::string, double>> params() const override {
    return {{"c0", c0_}, {"c1", c1_}};
  }
  bool lipschitz_only() const override { return true; }
  bool smooth_at(const double* x) const override { return x[0] != 0.0; }
  template <class T>
  void eval_impl(int i, const T* x, T* out) const {
    if (i == 0) {
      out[0] = T(0.0);
    } else {
      using std::fabs;
      using hypokernel::fabs;
      out[0] = fabs(x[0]) * c1_ + c0_;
    }
  }

 private:
  double c0_, c1_;
};

class Sin1dModel final : public FieldSetBase<Sin1dModel> {
 public:
  explicit Sin1dModel(double amp) : amp_(amp) {
    if (std::fabs(amp) >= 1.0) throw std::invalid_argument("sin1d: |amp| must be below 1");
  }
  int dim() const override { return 1; }
  int num_diffusion() const override { return 1; }
  std::string name() const override { return "sin1d"; }
  std::vector<std::pair<std::string, double>> params() const override {
    return {{"amp", amp_}};
  }
  template <class T>
  void eval_impl(int i, const T* x, T* out) const {
    if (i == 0) {
      out[0] = T(0.0);
    } else {
      using std::sin;
      using std::sqrt;
      using hypokernel::sin;
      using hypokernel::sqrt;
      out[0] = sqrt(sin(x[0]) * amp_ + 1.0);
    }
  }

 private:
  double amp_;
};

class ZeroModel final : public FieldSetBase<ZeroModel> {
 public:
  int dim() const override { return 2; }
  int num_diffusion() const override { return 1; }
  std::string name() const override { return "zero"; }
  template <class T>
  void eval_impl(int /*i*/, const T* /*x*/, T* out) const {
    out[0] = T(0.0);
    out[1] = T(0.0);
  }
};

struct PolyTerm {
  int gen = 0;
  int comp = 0;
  double coeff = 0.0;
  std::vector<int> exps;
};

class CustomPolyModel final : public FieldSetBase<CustomPolyModel> {
 public:
  CustomPolyModel(int n, int m, std::vector<PolyTerm> terms)
      : n_(n), m_(m), terms_(std::move(terms)) {}
  int dim() const override { return n_; }
  int num_diffusion() const override { return m_; }
  std::string name() const override { return "custom"; }
  template <class T>
  void eval_impl(int i, const T* x, T* out) const {
    for (int k = 0; k < n_; ++k) out[k] = T(0.0);
    for (const auto& t : terms_) {
      if (t.gen != i) continue;
      T v(t.coeff);
      for (int k = 0; k < n_; ++k)
        for (int e = 0; e < t.exps[k]; ++e) v = v * x[k];
      out[t.comp] = out[t.comp] + v;
    }
  }

 private:
  int n_, m_;
  std::vector<PolyTerm> terms_;
};

}  // namespace

std::unique_ptr<VectorFieldSet> make_model(const std::string& name,
                                           const std::map<std::string, double>& params) {
  if (name == "kolmogorov") {
    reject_unknown(params, {"lambda2", "mu1"});
    return std::make_unique<KolmogorovModel>(take(params, "lambda2", 1.0),
                                             take(params, "mu1", 1.0));
  }
  if (name == "grushin") {
    reject_unknown(params, {});
    return std::make_unique<GrushinModel>();
  }
  if (name == "elliptic_ou") {
    reject_unknown(params, {"kappa", "s1", "s2"});
    return std::make_unique<EllipticOuModel>(take(params, "kappa", 1.0), take(params, "s1", 1.0),
                                             take(params, "s2", 1.0));
  }
  if (name == "weak_lipschitz") {
    reject_unknown(params, {"c0", "c1"});
    return std::make_unique<WeakLipschitzModel>(take(params, "c0", 0.7), take(params, "c1", 0.3));
  }
  if (name == "sin1d") {
    reject_unknown(params, {"amp"});
    return std::make_unique<Sin1dModel>(take(params, "amp", 0.1));
  }
  if (name == "zero") {
    reject_unknown(params, {});
    return std::make_unique<ZeroModel>();
  }
  throw std::invalid_argument("unknown model: " + name);
}

std::vector<std::string> list_models() {
  return {"kolmogorov", "grushin", "elliptic_ou", "weak_lipschitz", "sin1d", "zero"};
}

Box default_box(const VectorFieldSet& vf) {
  Box b;
  double half = 3.0;
  if (vf.name() == "grushin" || vf.name() == "weak_lipschitz") half = 2.0;
  for (int i = 0; i < vf.dim(); ++i) {
    b.lo.push_back(-half);
    b.hi.push_back(half);
  }
  return b;
}

std::unique_ptr<VectorFieldSet> parse_custom_model(std::istream& in) {
  int n = -1, m = -1;
  std::vector<PolyTerm> terms;
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw std::invalid_argument("custom model line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "dim") {
      if (!(ls >> n) || n < 1 || n > 4) fail("dim expects an integer in 1..4");
    } else if (key == "fields") {
      if (!(ls >> m) || m < 1) fail("fields expects a positive integer");
    } else if (key == "term") {
      if (n < 0 || m < 0) fail("term before dim/fields");
      PolyTerm t;
      if (!(ls >> t.gen >> t.comp >> t.coeff)) fail("term expects: gen comp coeff e1..en");
      if (t.gen < 0 || t.gen > m) fail("generator index out of range");
      if (t.comp < 0 || t.comp >= n) fail("component index out of range");
      t.exps.resize(n);
      for (int k = 0; k < n; ++k) {
        if (!(ls >> t.exps[k]) || t.exps[k] < 0) fail("missing or negative exponent");
      }
      double extra;
      if (ls >> extra) fail("trailing values after exponents");
      terms.push_back(std::move(t));
    } else {
      fail("unknown key: " + key);
    }
  }
  if (n < 0 || m < 0) throw std::invalid_argument("custom model: dim and fields are required");
  return std::make_unique<CustomPolyModel>(n, m, std::move(terms));
}

std::unique_ptr<VectorFieldSet> load_custom_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open custom model file: " + path);
  return parse_custom_model(in);
}

}  // namespace hypokernel::models
