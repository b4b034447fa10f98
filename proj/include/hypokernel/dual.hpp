#pragma once

#include <cmath>
#include <stdexcept>

// Forward-mode directional dual numbers, nested for higher derivative order.
// Dual<T> carries a value and one directional derivative; nesting K times
// supports derivatives to order K.  Jacobians are assembled column by column
// by seeding one coordinate direction at a time.

namespace hypokernel {

template <class T>
struct Dual {
  T a{};  // value
  T b{};  // directional derivative

  Dual() = default;
  Dual(double v) : a(v), b(0.0) {}  // NOLINT: implicit lift of constants
  Dual(T va, T vb) : a(std::move(va)), b(std::move(vb)) {}
};

using D0 = double;
using D1 = Dual<double>;
using D2 = Dual<D1>;
using D3 = Dual<D2>;
using D4 = Dual<D3>;
using D5 = Dual<D4>;
using D6 = Dual<D5>;

inline constexpr int kMaxDualDepth = 6;

template <class T>
struct dual_depth {
  static constexpr int value = 0;
};
template <class T>
struct dual_depth<Dual<T>> {
  static constexpr int value = 1 + dual_depth<T>::value;
};
template <class T>
inline constexpr int dual_depth_v = dual_depth<T>::value;

inline double value_of(double x) { return x; }
template <class T>
double value_of(const Dual<T>& x) {
  return value_of(x.a);
}

template <class T>
Dual<T> operator+(const Dual<T>& x, const Dual<T>& y) {
  return {x.a + y.a, x.b + y.b};
}
template <class T>
Dual<T> operator-(const Dual<T>& x, const Dual<T>& y) {
  return {x.a - y.a, x.b - y.b};
}
template <class T>
Dual<T> operator-(const Dual<T>& x) {
  return {-x.a, -x.b};
}
template <class T>
Dual<T> operator*(const Dual<T>& x, const Dual<T>& y) {
  return {x.a * y.a, x.a * y.b + x.b * y.a};
}
template <class T>
Dual<T> operator/(const Dual<T>& x, const Dual<T>& y) {
  T inv = T(1.0) / y.a;
  T q = x.a * inv;
  return {q, (x.b - q * y.b) * inv};
}

template <class T>
Dual<T> operator+(const Dual<T>& x, double c) {
  return {x.a + c, x.b};
}
template <class T>
Dual<T> operator+(double c, const Dual<T>& x) {
  return {x.a + c, x.b};
}
template <class T>
Dual<T> operator-(const Dual<T>& x, double c) {
  return {x.a - c, x.b};
}
template <class T>
Dual<T> operator-(double c, const Dual<T>& x) {
  return {c - x.a, -x.b};
}
template <class T>
Dual<T> operator*(const Dual<T>& x, double c) {
  return {x.a * c, x.b * c};
}
template <class T>
Dual<T> operator*(double c, const Dual<T>& x) {
  return {x.a * c, x.b * c};
}
template <class T>
Dual<T> operator/(const Dual<T>& x, double c) {
  return {x.a / c, x.b / c};
}
template <class T>
Dual<T> operator/(double c, const Dual<T>& x) {
  return Dual<T>(c) / x;
}

template <class T>
Dual<T>& operator+=(Dual<T>& x, const Dual<T>& y) {
  x = x + y;
  return x;
}
template <class T>
Dual<T>& operator-=(Dual<T>& x, const Dual<T>& y) {
  x = x - y;
  return x;
}
template <class T>
Dual<T>& operator*=(Dual<T>& x, const Dual<T>& y) {
  x = x * y;
  return x;
}

using std::cos;
using std::exp;
using std::fabs;
using std::log;
using std::sin;
using std::sqrt;

template <class T>
Dual<T> sin(const Dual<T>& x) {
  return {sin(x.a), cos(x.a) * x.b};
}
template <class T>
Dual<T> cos(const Dual<T>& x) {
  return {cos(x.a), -(sin(x.a) * x.b)};
}
template <class T>
Dual<T> exp(const Dual<T>& x) {
  T e = exp(x.a);
  return {e, e * x.b};
}
template <class T>
Dual<T> sqrt(const Dual<T>& x) {
  T r = sqrt(x.a);
  return {r, x.b / (2.0 * r)};
}
template <class T>
Dual<T> log(const Dual<T>& x) {
  return {log(x.a), x.b / x.a};
}
// |x| differentiates as sign(x); callers guard the kink through model
// smooth-set checks before evaluating.
template <class T>
Dual<T> fabs(const Dual<T>& x) {
  if (value_of(x.a) == 0.0) throw std::domain_error("fabs: derivative at kink");
  return value_of(x.a) > 0.0 ? x : -x;
}

}  // namespace hypokernel
