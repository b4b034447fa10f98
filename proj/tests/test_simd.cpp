#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "hypokernel/simd.hpp"

namespace simd = hypokernel::simd;

namespace {

struct Arrays {
  std::vector<double> a, b, w;
};

Arrays random_arrays(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Arrays r;
  r.a.resize(n);
  r.b.resize(n);
  r.w.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.a[i] = u(rng);
    r.b[i] = u(rng);
    r.w[i] = std::fabs(u(rng));
  }
  return r;
}

long double dot_ld(const std::vector<double>& a, const std::vector<double>& b) {
  long double acc = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (long double)a[i] * b[i];
  return acc;
}

}  // namespace

TEST_CASE("lane selection") {
  REQUIRE(simd::select_lane("scalar"));
  CHECK(std::string(simd::active_lane()) == "scalar");
  if (simd::avx2_available()) {
    REQUIRE(simd::select_lane("avx2"));
    CHECK(std::string(simd::active_lane()) == "avx2");
  } else {
    CHECK_FALSE(simd::select_lane("avx2"));
  }
  CHECK_FALSE(simd::select_lane("sse9"));
  REQUIRE(simd::select_lane("auto"));
}

TEST_CASE("scalar reference matches long-double reductions") {
  for (std::size_t n : {1u, 7u, 64u, 1001u}) {
    auto r = random_arrays(n, 17u + (unsigned)n);
    long double ref = dot_ld(r.a, r.b);
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) scale += std::fabs(r.a[i] * r.b[i]);
    CHECK(std::fabs((double)(simd::ref::dot(r.a.data(), r.b.data(), n) - ref)) <=
          1e-13 * (scale + 1.0));
  }
}

TEST_CASE("avx2 lane equivalent to scalar lane") {
  if (!simd::avx2_available()) return;
  for (std::size_t n : {1u, 3u, 4u, 5u, 8u, 15u, 16u, 17u, 1000u, 10001u}) {
    auto r = random_arrays(n, 99u + (unsigned)n);
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) scale += std::fabs(r.a[i] * r.b[i]);

    REQUIRE(simd::select_lane("avx2"));
    double d_v = simd::dot(r.a.data(), r.b.data(), n);
    double s_v = simd::sum(r.a.data(), n);
    double m_v = simd::max_abs(r.a.data(), n);
    double md_v = simd::max_abs_diff(r.a.data(), r.b.data(), n);
    double wd_v = simd::weighted_abs_diff(r.w.data(), r.a.data(), r.b.data(), n);

    double d_r = simd::ref::dot(r.a.data(), r.b.data(), n);
    double s_r = simd::ref::sum(r.a.data(), n);
    double m_r = simd::ref::max_abs(r.a.data(), n);
    double md_r = simd::ref::max_abs_diff(r.a.data(), r.b.data(), n);
    double wd_r = simd::ref::weighted_abs_diff(r.w.data(), r.a.data(), r.b.data(), n);

    CHECK(std::fabs(d_v - d_r) <= 1e-13 * (scale + 1.0));
    CHECK(std::fabs(s_v - s_r) <= 1e-13 * (double)n);
    CHECK(m_v == m_r);
    CHECK(md_v == md_r);
    CHECK(std::fabs(wd_v - wd_r) <= 1e-13 * (double)n);

    std::vector<double> y_v = r.b, y_r = r.b;
    simd::axpy(0.37, r.a.data(), y_v.data(), n);
    simd::ref::axpy(0.37, r.a.data(), y_r.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::fabs(y_v[i] - y_r[i]) <= 1e-15);
    REQUIRE(simd::select_lane("auto"));
  }
}

TEST_CASE("vector exp matches std::exp") {
  if (!simd::avx2_available()) return;
  REQUIRE(simd::select_lane("avx2"));
  std::mt19937_64 rng(4242);
  std::uniform_real_distribution<double> u(-700.0, 700.0);
  std::vector<double> x(4097), out(4097);
  for (auto& v : x) v = u(rng);
  x[0] = 0.0;
  x[1] = -1e-12;
  x[2] = 690.0;
  x[3] = -690.0;
  simd::exp_neg(x.data(), out.data(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double ref = std::exp(-x[i]);
    CHECK(std::fabs(out[i] - ref) <= 5e-14 * ref + 1e-300);
  }
  // Underflow region saturates near the smallest normal rather than NaN.
  double deep[4] = {800.0, 1000.0, 5000.0, 1e6};
  double dout[4];
  simd::exp_neg(deep, dout, 4);
  for (double v : dout) {
    CHECK(v >= 0.0);
    CHECK(v <= 1e-300);
  }
  REQUIRE(simd::select_lane("auto"));
}
