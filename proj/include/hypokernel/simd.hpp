#pragma once

#include <cstddef>
#include <string_view>

// Data-parallel inner kernels used by the grid, quadrature, oracle and
// estimate layers.  Every kernel has a scalar reference implementation and
// (on x86-64) an AVX2 variant; the function pointers below are bound once at
// startup from runtime CPU detection and may be rebound through
// select_lane() or the HYPOKERNEL_SIMD environment variable
// ("scalar" | "avx2" | "auto").  Lanes are equivalence-tested against the
// reference in tests/test_simd.cpp.

namespace hypokernel::simd {

extern double (*dot)(const double* a, const double* b, std::size_t n);
extern double (*sum)(const double* v, std::size_t n);
extern void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
extern double (*max_abs)(const double* v, std::size_t n);
extern double (*max_abs_diff)(const double* a, const double* b, std::size_t n);
extern double (*weighted_abs_diff)(const double* w, const double* a, const double* b,
                                   std::size_t n);
// out[i] = exp(-x[i]); x may be any finite value, results clamp to [0, inf).
extern void (*exp_neg)(const double* x, double* out, std::size_t n);

// Name of the lane currently bound: "scalar" or "avx2".
const char* active_lane();

// Rebind all kernels.  "auto" redoes CPU detection.  Returns false (and
// leaves the binding unchanged) if the requested lane is unavailable.
bool select_lane(std::string_view lane);

namespace ref {
double dot(const double* a, const double* b, std::size_t n);
double sum(const double* v, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double max_abs(const double* v, std::size_t n);
double max_abs_diff(const double* a, const double* b, std::size_t n);
double weighted_abs_diff(const double* w, const double* a, const double* b, std::size_t n);
void exp_neg(const double* x, double* out, std::size_t n);
}  // namespace ref

bool avx2_available();

}  // namespace hypokernel::simd
