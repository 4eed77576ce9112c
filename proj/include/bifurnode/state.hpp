#pragma once

#include <cmath>
#include <type_traits>

namespace bifurnode {

// Scalar-generic helpers. Traced types provide their own overloads found by ADL.
inline double value_of(double v) { return v; }

template <class T>
struct State2 {
  T x{};
  T y{};

  State2 &operator+=(const State2 &o) {
    x = x + o.x;
    y = y + o.y;
    return *this;
  }
};

template <class T>
State2<T> operator+(const State2<T> &a, const State2<T> &b) {
  return {a.x + b.x, a.y + b.y};
}

template <class T>
State2<T> operator-(const State2<T> &a, const State2<T> &b) {
  return {a.x - b.x, a.y - b.y};
}

template <class T, class S>
State2<T> operator*(const S &s, const State2<T> &a) {
  return {s * a.x, s * a.y};
}

template <class T>
bool operator==(const State2<T> &a, const State2<T> &b) {
  return a.x == b.x && a.y == b.y;
}

using StateVector = State2<double>;

template <class T>
StateVector values_of(const State2<T> &s) {
  return {value_of(s.x), value_of(s.y)};
}

inline bool is_finite(const StateVector &s) { return std::isfinite(s.x) && std::isfinite(s.y); }

}  // namespace bifurnode
