#pragma once

// Explicit Runge-Kutta integrators for planar autonomous systems
// dz/dt = f(z, alpha).
//
// integrate_dopri5 is the adaptive Dormand-Prince 5(4) pair (7 stages,
// first-same-as-last). Steps are clamped so the integrator lands exactly on
// every requested sample time; no interpolation is involved. integrate_rk4 is a
// classical fixed-step scheme used as a reference solution.
//
// Both are templated on the state scalar so the same code runs on double and
// on ad::Var. When tracing, a rejected step is rewound from the tape and the
// step-size controller only ever looks at primal values.

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "bifurnode/autodiff.hpp"
#include "bifurnode/state.hpp"

namespace bifurnode {

struct SolverConfig {
  double rtol = 1e-5;
  double atol = 1e-7;
  double h_init = 0.01;
  double h_min = 1e-10;
  double h_max = 1.0;
  std::size_t max_steps = 100000;
  double safety = 0.9;

  // Settings used while training and when scanning learned fields.
  static SolverConfig training() { return {}; }

  // Reference-data settings, tighter than training.
  static SolverConfig ground_truth() {
    SolverConfig c;
    c.rtol = 1e-8;
    c.atol = 1e-10;
    return c;
  }

  void validate() const {
    if (!(rtol > 0.0) || !(atol > 0.0)) throw std::invalid_argument("SolverConfig: tolerances must be positive");
    if (!(h_min > 0.0) || !(h_min <= h_max)) throw std::invalid_argument("SolverConfig: need 0 < h_min <= h_max");
    if (!(h_init > 0.0)) throw std::invalid_argument("SolverConfig: h_init must be positive");
    if (max_steps == 0) throw std::invalid_argument("SolverConfig: max_steps must be positive");
    if (!(safety > 0.0 && safety < 1.0)) throw std::invalid_argument("SolverConfig: safety must lie in (0, 1)");
  }
};

enum class SolverErrorKind { MaxStepsExceeded, StepUnderflow, NonFiniteState };

inline const char *to_string(SolverErrorKind k) {
  switch (k) {
    case SolverErrorKind::MaxStepsExceeded: return "max steps exceeded";
    case SolverErrorKind::StepUnderflow: return "step size underflow";
    case SolverErrorKind::NonFiniteState: return "non-finite state";
  }
  return "solver error";
}

class SolverError : public std::runtime_error {
 public:
  SolverError(SolverErrorKind kind, double time, double interval_begin, double interval_end)
      : std::runtime_error(describe(kind, time, interval_begin, interval_end)),
        kind_(kind),
        time_(time),
        interval_begin_(interval_begin),
        interval_end_(interval_end) {}

  SolverErrorKind kind() const { return kind_; }
  double time() const { return time_; }
  double interval_begin() const { return interval_begin_; }
  double interval_end() const { return interval_end_; }

 private:
  static std::string describe(SolverErrorKind kind, double t, double a, double b) {
    std::ostringstream os;
    os << to_string(kind) << " at t=" << t << " while integrating [" << a << ", " << b << "]";
    return os.str();
  }

  SolverErrorKind kind_;
  double time_;
  double interval_begin_;
  double interval_end_;
};

template <class T>
struct IntegrationResult {
  std::vector<State2<T>> states;  // one per requested sample time
  std::size_t steps_taken = 0;    // attempted steps, accepted or not
  std::size_t rejected_steps = 0;
};

namespace dopri5 {

inline constexpr double c2 = 1.0 / 5.0, c3 = 3.0 / 10.0, c4 = 4.0 / 5.0, c5 = 8.0 / 9.0;

inline constexpr double a21 = 1.0 / 5.0;
inline constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
inline constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
inline constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                        a54 = -212.0 / 729.0;
inline constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                        a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
// Fifth-order weights; also row 7 of the tableau (FSAL).
inline constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0,
                        b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;
// Fifth minus fourth order weights.
inline constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                        e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;

// Full tableau as a matrix for consistency checks.
inline constexpr std::array<double, 7> c = {0.0, c2, c3, c4, c5, 1.0, 1.0};
inline constexpr std::array<std::array<double, 6>, 7> a = {{
    {0, 0, 0, 0, 0, 0},
    {a21, 0, 0, 0, 0, 0},
    {a31, a32, 0, 0, 0, 0},
    {a41, a42, a43, 0, 0, 0},
    {a51, a52, a53, a54, 0, 0},
    {a61, a62, a63, a64, a65, 0},
    {b1, 0, b3, b4, b5, b6},
}};
inline constexpr std::array<double, 7> b5th = {b1, 0, b3, b4, b5, b6, 0};
inline constexpr std::array<double, 7> b4th = {b1 - e1, 0, b3 - e3, b4 - e4, b5 - e5, b6 - e6, -e7};

}  // namespace dopri5

namespace detail {

inline void check_sample_times(std::span<const double> times) {
  if (times.empty()) throw std::invalid_argument("integrate: no sample times");
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw std::invalid_argument("integrate: sample times must increase");
  }
}

template <class T>
void require_finite(const State2<T> &s, double t, double a, double b) {
  if (!is_finite(values_of(s))) throw SolverError(SolverErrorKind::NonFiniteState, t, a, b);
}

// Records on the active tape only when tracing.
template <class T>
struct TapeCheckpoint {
  void save() {}
  void restore() {}
};

template <>
struct TapeCheckpoint<ad::Var> {
  ad::Tape *tape = ad::active_tape();
  ad::Tape::Mark mark{};
  void save() {
    if (tape) mark = tape->mark();
  }
  void restore() {
    if (tape) tape->rewind(mark);
  }
};

}  // namespace detail

// Adaptive Dormand-Prince integration of `rhs` from `ic` at `sample_times[0]`,
// returning the state at every sample time.
template <class T, class Rhs, class A>
IntegrationResult<T> integrate_dopri5(const Rhs &rhs, const State2<T> &ic, const A &alpha,
                                      std::span<const double> sample_times, const SolverConfig &cfg) {
  using namespace dopri5;
  cfg.validate();
  detail::check_sample_times(sample_times);

  IntegrationResult<T> out;
  out.states.reserve(sample_times.size());
  out.states.push_back(ic);

  State2<T> y = ic;
  double t = sample_times.front();
  double h = std::min(cfg.h_init, cfg.h_max);
  State2<T> k1 = rhs(y, alpha);
  detail::require_finite(k1, t, t, t);
  detail::TapeCheckpoint<T> checkpoint;

  for (std::size_t s = 1; s < sample_times.size(); ++s) {
    const double t_begin = sample_times[s - 1];
    const double t_next = sample_times[s];
    while (t < t_next) {
      if (out.steps_taken >= cfg.max_steps) throw SolverError(SolverErrorKind::MaxStepsExceeded, t, t_begin, t_next);
      ++out.steps_taken;

      // Land on the sample time; absorb slivers shorter than 1% of h.
      double step = h;
      bool clamped = false;
      if (t + 1.01 * h >= t_next) {
        step = t_next - t;
        clamped = true;
      }

      checkpoint.save();
      const State2<T> y2 = y + (step * a21) * k1;
      const State2<T> k2 = rhs(y2, alpha);
      detail::require_finite(k2, t, t_begin, t_next);
      const State2<T> y3 = y + step * (a31 * k1 + a32 * k2);
      const State2<T> k3 = rhs(y3, alpha);
      detail::require_finite(k3, t, t_begin, t_next);
      const State2<T> y4 = y + step * (a41 * k1 + a42 * k2 + a43 * k3);
      const State2<T> k4 = rhs(y4, alpha);
      detail::require_finite(k4, t, t_begin, t_next);
      const State2<T> y5 = y + step * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
      const State2<T> k5 = rhs(y5, alpha);
      detail::require_finite(k5, t, t_begin, t_next);
      const State2<T> y6 = y + step * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
      const State2<T> k6 = rhs(y6, alpha);
      detail::require_finite(k6, t, t_begin, t_next);
      const State2<T> y7 = y + step * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
      detail::require_finite(y7, t, t_begin, t_next);
      const State2<T> k7 = rhs(y7, alpha);
      detail::require_finite(k7, t, t_begin, t_next);

      // Error estimate on primal values only.
      const StateVector v1 = values_of(k1), v3 = values_of(k3), v4 = values_of(k4), v5 = values_of(k5),
                        v6 = values_of(k6), v7 = values_of(k7);
      const StateVector y0v = values_of(y), y7v = values_of(y7);
      const double ex = step * (e1 * v1.x + e3 * v3.x + e4 * v4.x + e5 * v5.x + e6 * v6.x + e7 * v7.x);
      const double ey = step * (e1 * v1.y + e3 * v3.y + e4 * v4.y + e5 * v5.y + e6 * v6.y + e7 * v7.y);
      const double sx = cfg.atol + cfg.rtol * std::max(std::abs(y0v.x), std::abs(y7v.x));
      const double sy = cfg.atol + cfg.rtol * std::max(std::abs(y0v.y), std::abs(y7v.y));
      const double err = std::sqrt(0.5 * ((ex / sx) * (ex / sx) + (ey / sy) * (ey / sy)));

      double factor = err == 0.0 ? 5.0 : cfg.safety * std::pow(1.0 / err, 0.2);
      factor = std::clamp(factor, 0.2, 5.0);

      if (err <= 1.0) {
        t = clamped ? t_next : t + step;
        y = y7;
        k1 = k7;
        double proposal = step * factor;
        // A step shortened to hit a sample time says nothing against h itself.
        if (clamped) proposal = std::max(proposal, h);
        h = std::min(proposal, cfg.h_max);
      } else {
        checkpoint.restore();
        ++out.rejected_steps;
        h = step * factor;
        if (h < cfg.h_min) throw SolverError(SolverErrorKind::StepUnderflow, t, t_begin, t_next);
      }
    }
    out.states.push_back(y);
  }
  return out;
}

// Classical fixed-step RK4. Each sample interval is covered by whole steps of
// size h plus one shorter final step when h does not divide it.
template <class T, class Rhs, class A>
IntegrationResult<T> integrate_rk4(const Rhs &rhs, const State2<T> &ic, const A &alpha,
                                   std::span<const double> sample_times, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("integrate_rk4: step must be positive");
  detail::check_sample_times(sample_times);

  IntegrationResult<T> out;
  out.states.reserve(sample_times.size());
  out.states.push_back(ic);
  State2<T> y = ic;

  auto rk4_step = [&](double t, double dt) {
    const State2<T> k1 = rhs(y, alpha);
    const State2<T> k2 = rhs(y + (0.5 * dt) * k1, alpha);
    const State2<T> k3 = rhs(y + (0.5 * dt) * k2, alpha);
    const State2<T> k4 = rhs(y + dt * k3, alpha);
    y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    detail::require_finite(y, t, t, t + dt);
    ++out.steps_taken;
  };

  for (std::size_t s = 1; s < sample_times.size(); ++s) {
    const double t0 = sample_times[s - 1];
    const double span = sample_times[s] - t0;
    const auto whole = static_cast<std::size_t>(std::floor(span / h + 1e-9));
    for (std::size_t k = 0; k < whole; ++k) rk4_step(t0 + static_cast<double>(k) * h, h);
    const double rest = span - static_cast<double>(whole) * h;
    if (rest > 1e-12 * std::max(1.0, std::abs(span))) rk4_step(t0 + static_cast<double>(whole) * h, rest);
    out.states.push_back(y);
  }
  return out;
}

}  // namespace bifurnode
