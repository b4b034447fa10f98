#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hypokernel/fields.hpp"

// Built-in model registry plus the polynomial custom-field text format.
// All models store generator-form coefficients: the operator is
//   dt u = sum_ij a_ij d2_ij u + sum_j b_j d_j u,   a = sigma sigma^T,
// with any one-half convention absorbed into the stored sigma columns.

namespace hypokernel::models {

using fields::VectorFieldSet;

struct Box {
  std::vector<double> lo, hi;
  [[nodiscard]] int dim() const { return static_cast<int>(lo.size()); }
};

// kolmogorov(lambda2, mu1):  sigma_1 = (0, sqrt(lambda2)),  b = (-mu1 x2, 0)
// grushin:                   sigma_1 = (1, 0), sigma_2 = (0, x1), b = 0
// elliptic_ou(kappa,s1,s2):  sigma = diag(s1, s2),           b = -kappa x
// weak_lipschitz(c0, c1):    1D, sigma_1 = c0 + c1 |x|,       b = 0
// sin1d(amp):                1D, sigma_1 = sqrt(1 + amp sin x), b = 0
// zero:                      2D, all generators identically zero
std::unique_ptr<VectorFieldSet> make_model(const std::string& name,
                                           const std::map<std::string, double>& params = {});

std::vector<std::string> list_models();

Box default_box(const VectorFieldSet& vf);

// Custom polynomial fields, text format (whitespace separated, '#' comments):
//   dim <n>
//   fields <m>
//   term <generator 0..m> <component 0..n-1> <coeff> <e1> ... <en>
// Generator 0 is the drift.  Unknown keys are rejected.
std::unique_ptr<VectorFieldSet> parse_custom_model(std::istream& in);
std::unique_ptr<VectorFieldSet> load_custom_model(const std::string& path);

}  // namespace hypokernel::models
