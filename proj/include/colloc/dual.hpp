#pragma once

#include <cmath>
#include <type_traits>

namespace colloc {

// Forward-mode AD scalar with a single seed direction. Nest (Dual<Dual<...>>)
// for higher derivatives.
template <typename T>
struct Dual {
    T v{};  // value
    T d{};  // directional derivative

    constexpr Dual() = default;
    constexpr Dual(T value) : v(value), d() {}
    constexpr Dual(T value, T deriv) : v(value), d(deriv) {}

    // allow double literals at any nesting depth
    template <typename U = T, typename = std::enable_if_t<!std::is_same_v<U, double>>>
    constexpr Dual(double value) : v(value), d() {}

    constexpr Dual operator-() const { return {-v, -d}; }

    constexpr Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
    constexpr Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
    constexpr Dual& operator*=(const Dual& o) { d = d * o.v + v * o.d; v = v * o.v; return *this; }
    constexpr Dual& operator/=(const Dual& o) {
        d = (d * o.v - v * o.d) / (o.v * o.v);
        v = v / o.v;
        return *this;
    }
};

template <typename T> constexpr Dual<T> operator+(Dual<T> a, const Dual<T>& b) { return a += b; }
template <typename T> constexpr Dual<T> operator-(Dual<T> a, const Dual<T>& b) { return a -= b; }
template <typename T> constexpr Dual<T> operator*(Dual<T> a, const Dual<T>& b) { return a *= b; }
template <typename T> constexpr Dual<T> operator/(Dual<T> a, const Dual<T>& b) { return a /= b; }

template <typename T> constexpr Dual<T> operator+(Dual<T> a, double b) { a.v += b; return a; }
template <typename T> constexpr Dual<T> operator+(double a, Dual<T> b) { b.v += a; return b; }
template <typename T> constexpr Dual<T> operator-(Dual<T> a, double b) { a.v -= b; return a; }
template <typename T> constexpr Dual<T> operator-(double a, const Dual<T>& b) { return {a - b.v, -b.d}; }
template <typename T> constexpr Dual<T> operator*(Dual<T> a, double b) { a.v *= b; a.d *= b; return a; }
template <typename T> constexpr Dual<T> operator*(double a, Dual<T> b) { b.v *= a; b.d *= a; return b; }
template <typename T> constexpr Dual<T> operator/(Dual<T> a, double b) { a.v /= b; a.d /= b; return a; }
template <typename T> constexpr Dual<T> operator/(double a, const Dual<T>& b) {
    return Dual<T>{T(a)} / b;
}

template <typename T> constexpr bool operator<(const Dual<T>& a, const Dual<T>& b) { return a.v < b.v; }
template <typename T> constexpr bool operator>(const Dual<T>& a, const Dual<T>& b) { return a.v > b.v; }

using std::cos;
using std::exp;
using std::log;
using std::sin;
using std::sqrt;

template <typename T> Dual<T> sin(const Dual<T>& x) { return {sin(x.v), x.d * cos(x.v)}; }
template <typename T> Dual<T> cos(const Dual<T>& x) { return {cos(x.v), -x.d * sin(x.v)}; }
template <typename T> Dual<T> exp(const Dual<T>& x) { T e = exp(x.v); return {e, x.d * e}; }
template <typename T> Dual<T> log(const Dual<T>& x) { return {log(x.v), x.d / x.v}; }
template <typename T> Dual<T> sqrt(const Dual<T>& x) {
    T s = sqrt(x.v);
    return {s, x.d / (2.0 * s)};
}

// innermost double of a (possibly nested) dual
constexpr double value_of(double x) { return x; }
template <typename T> constexpr double value_of(const Dual<T>& x) { return value_of(x.v); }

using Dual1 = Dual<double>;
using Dual2 = Dual<Dual<double>>;
using Dual3 = Dual<Dual<Dual<double>>>;

}  // namespace colloc
