#include "hypokernel/simd.hpp"

#include <cstdlib>

namespace hypokernel::simd {

#ifdef HYPOKERNEL_HAVE_AVX2_TU
namespace avx2 {
double dot(const double*, const double*, std::size_t);
double sum(const double*, std::size_t);
void axpy(double, const double*, double*, std::size_t);
double max_abs(const double*, std::size_t);
double max_abs_diff(const double*, const double*, std::size_t);
double weighted_abs_diff(const double*, const double*, const double*, std::size_t);
void exp_neg(const double*, double*, std::size_t);
}  // namespace avx2
#endif

double (*dot)(const double*, const double*, std::size_t) = ref::dot;
double (*sum)(const double*, std::size_t) = ref::sum;
void (*axpy)(double, const double*, double*, std::size_t) = ref::axpy;
double (*max_abs)(const double*, std::size_t) = ref::max_abs;
double (*max_abs_diff)(const double*, const double*, std::size_t) = ref::max_abs_diff;
double (*weighted_abs_diff)(const double*, const double*, const double*, std::size_t) =
    ref::weighted_abs_diff;
void (*exp_neg)(const double*, double*, std::size_t) = ref::exp_neg;

namespace {
const char* g_active = "scalar";

void bind_scalar() {
  dot = ref::dot;
  sum = ref::sum;
  axpy = ref::axpy;
  max_abs = ref::max_abs;
  max_abs_diff = ref::max_abs_diff;
  weighted_abs_diff = ref::weighted_abs_diff;
  exp_neg = ref::exp_neg;
  g_active = "scalar";
}

#ifdef HYPOKERNEL_HAVE_AVX2_TU
void bind_avx2() {
  dot = avx2::dot;
  sum = avx2::sum;
  axpy = avx2::axpy;
  max_abs = avx2::max_abs;
  max_abs_diff = avx2::max_abs_diff;
  weighted_abs_diff = avx2::weighted_abs_diff;
  exp_neg = avx2::exp_neg;
  g_active = "avx2";
}
#endif

struct LaneInit {
  LaneInit() {
    const char* env = std::getenv("HYPOKERNEL_SIMD");
    select_lane(env ? env : "auto");
  }
};
const LaneInit g_init;

}  // namespace

bool avx2_available() {
#ifdef HYPOKERNEL_HAVE_AVX2_TU
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const char* active_lane() { return g_active; }

bool select_lane(std::string_view lane) {
  if (lane == "scalar") {
    bind_scalar();
    return true;
  }
#ifdef HYPOKERNEL_HAVE_AVX2_TU
  if (lane == "avx2") {
    if (!avx2_available()) return false;
    bind_avx2();
    return true;
  }
#else
  if (lane == "avx2") return false;
#endif
  if (lane == "auto") {
#ifdef HYPOKERNEL_HAVE_AVX2_TU
    if (avx2_available()) {
      bind_avx2();
      return true;
    }
#endif
    bind_scalar();
    return true;
  }
  return false;
}

}  // namespace hypokernel::simd
