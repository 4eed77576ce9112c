#pragma once

// Ground-truth predator-prey system with nonlinear prey damping:
//
//   dx/dt = 3x(1 - x) - xy - alpha (1 - exp(-5x))
//   dy/dt = -y + 3xy
//
// plus trajectory simulation, additive measurement noise and the analytic
// structure (equilibria, Jacobians, Hopf point) that the tests lean on.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bifurnode/odesolve.hpp"
#include "bifurnode/rng.hpp"
#include "bifurnode/state.hpp"

namespace bifurnode {

template <class T, class A>
State2<T> true_rhs(const State2<T> &z, const A &alpha) {
  using std::exp;
  const T &x = z.x;
  const T &y = z.y;
  return {3.0 * x * (1.0 - x) - x * y - alpha * (1.0 - exp(-5.0 * x)), -y + 3.0 * x * y};
}

// The ground-truth field as a vector-field callable.
struct TrueField {
  template <class T, class A>
  State2<T> operator()(const State2<T> &z, const A &alpha) const {
    return true_rhs(z, alpha);
  }
};

struct Trajectory {
  double alpha = 0.0;
  StateVector initial_condition{};
  std::vector<double> times;
  std::vector<StateVector> states;
  double noise_sigma = 0.0;
  int series_id = 0;

  std::size_t size() const { return times.size(); }

  void validate() const {
    if (times.empty() || times.front() != 0.0) throw std::invalid_argument("Trajectory: first time must be 0");
    for (std::size_t i = 1; i < times.size(); ++i) {
      if (!(times[i] > times[i - 1])) throw std::invalid_argument("Trajectory: times must increase");
    }
    if (states.size() != times.size()) throw std::invalid_argument("Trajectory: states/times length mismatch");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("Trajectory: noise_sigma must be >= 0");
  }
};

// t = 0, 1, ..., t_end.
inline std::vector<double> unit_sample_times(int t_end) {
  std::vector<double> t(static_cast<std::size_t>(t_end) + 1);
  for (int i = 0; i <= t_end; ++i) t[static_cast<std::size_t>(i)] = static_cast<double>(i);
  return t;
}

inline Trajectory simulate_true(const StateVector &ic, double alpha, std::span<const double> sample_times,
                                const SolverConfig &solver = SolverConfig::ground_truth(), int series_id = 0) {
  const auto result = integrate_dopri5(TrueField{}, ic, alpha, sample_times, solver);
  Trajectory traj;
  traj.alpha = alpha;
  traj.initial_condition = ic;
  traj.times.assign(sample_times.begin(), sample_times.end());
  traj.states = result.states;
  traj.noise_sigma = 0.0;
  traj.series_id = series_id;
  return traj;
}

// Adds independent N(0, sigma^2) draws to x and y of every sample, t = 0
// included. Draw order is x then y, sample by sample.
inline Trajectory add_noise(const Trajectory &traj, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("add_noise: sigma must be >= 0");
  Trajectory out = traj;
  out.noise_sigma = sigma;
  if (sigma == 0.0) return out;
  Rng rng(seed);
  for (auto &s : out.states) {
    s.x += sigma * rng.normal();
    s.y += sigma * rng.normal();
  }
  return out;
}

using Matrix2 = std::array<std::array<double, 2>, 2>;

inline Matrix2 true_jacobian(const StateVector &z, double alpha) {
  const double x = z.x, y = z.y;
  return {{{3.0 - 6.0 * x - y - 5.0 * alpha * std::exp(-5.0 * x), -x}, {3.0 * y, -1.0 + 3.0 * x}}};
}

enum class EquilibriumKind { Zero, AxisLower, AxisUpper, Coexistence };

struct EquilibriumInfo {
  EquilibriumKind kind{};
  StateVector location{};
  Matrix2 jacobian{};
  double trace = 0.0;
  double determinant = 0.0;
  std::array<double, 2> eigen_real_parts{};
};

inline EquilibriumInfo describe_equilibrium(EquilibriumKind kind, const StateVector &z, double alpha) {
  EquilibriumInfo e;
  e.kind = kind;
  e.location = z;
  e.jacobian = true_jacobian(z, alpha);
  e.trace = e.jacobian[0][0] + e.jacobian[1][1];
  e.determinant = e.jacobian[0][0] * e.jacobian[1][1] - e.jacobian[0][1] * e.jacobian[1][0];
  const double half = 0.5 * e.trace;
  const double disc = half * half - e.determinant;
  if (disc >= 0.0) {
    const double r = std::sqrt(disc);
    e.eigen_real_parts = {half - r, half + r};
  } else {
    e.eigen_real_parts = {half, half};
  }
  return e;
}

// Prey growth along the x-axis, g(x) = 3x(1 - x) - alpha (1 - exp(-5x)).
inline double axis_growth(double x, double alpha) { return 3.0 * x * (1.0 - x) - alpha * (1.0 - std::exp(-5.0 * x)); }

inline StateVector coexistence_point(double alpha) {
  return {1.0 / 3.0, 2.0 - 3.0 * alpha * (1.0 - std::exp(-5.0 / 3.0))};
}

namespace detail {

template <class F>
double bisect(F &&f, double lo, double hi, double tol) {
  double flo = f(lo);
  for (int it = 0; it < 200 && hi - lo > tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((fm < 0.0) == (flo < 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

// All four equilibria: origin, the two positive x-axis roots, coexistence.
inline std::vector<EquilibriumInfo> equilibrium_analysis(double alpha) {
  if (!(alpha > 0.6 && alpha < 0.8)) throw std::invalid_argument("equilibrium_analysis: alpha must lie in (0.6, 0.8)");
  std::vector<double> roots;
  constexpr int kGrid = 20000;
  double prev_x = 1.0 / kGrid;
  double prev_g = axis_growth(prev_x, alpha);
  for (int i = 2; i <= kGrid; ++i) {
    const double x = static_cast<double>(i) / kGrid;
    const double g = axis_growth(x, alpha);
    if ((g < 0.0) != (prev_g < 0.0)) {
      roots.push_back(detail::bisect([alpha](double v) { return axis_growth(v, alpha); }, prev_x, x, 1e-15));
    }
    prev_x = x;
    prev_g = g;
  }
  if (roots.size() != 2) {
    throw std::runtime_error("equilibrium_analysis: expected two x-axis equilibria at alpha=" + std::to_string(alpha) +
                             ", found " + std::to_string(roots.size()));
  }
  return {
      describe_equilibrium(EquilibriumKind::Zero, {0.0, 0.0}, alpha),
      describe_equilibrium(EquilibriumKind::AxisLower, {roots[0], 0.0}, alpha),
      describe_equilibrium(EquilibriumKind::AxisUpper, {roots[1], 0.0}, alpha),
      describe_equilibrium(EquilibriumKind::Coexistence, coexistence_point(alpha), alpha),
  };
}

inline double coexistence_trace(double alpha) {
  const Matrix2 j = true_jacobian(coexistence_point(alpha), alpha);
  return j[0][0] + j[1][1];
}

// Alpha where the trace at the coexistence point changes sign (Hopf point).
inline double hopf_alpha() { return detail::bisect(coexistence_trace, 0.6, 0.8, 1e-10); }

}  // namespace bifurnode
