// dopri5.hpp — Dormand–Prince 5(4) embedded Runge–Kutta integrator for Eigen-valued ODEs
//
// The integrator steps exactly onto every requested stop time, so observers see the
// 5th-order solution rather than an interpolant. Error control uses the max-norm of
// |err| / (atol + rtol * max(|y|, |y_new|)).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <sstream>

#include "tlsphonon/errors.hpp"

namespace tlsphonon {

struct StepControl {
  double rtol = 1e-8;
  double atol = 1e-10;
  double initial_step = 0.0;  ///< 0 selects a step from the derivative scale
  double max_step = 0.0;      ///< 0 means unbounded
  std::size_t max_steps = 10'000'000;
};

struct IntegrationStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t rhs_evaluations = 0;
};

namespace detail {

template <class State>
double scaled_max_error(const State& err, const State& y0, const State& y1, double rtol, double atol) {
  const auto scale = (atol + rtol * y0.cwiseAbs().cwiseMax(y1.cwiseAbs()).array());
  return (err.cwiseAbs().array() / scale).maxCoeff();
}

}  // namespace detail

/// Integrates dy/dt = f(t, y, dydt) from t0 through every time in `stops`
/// (strictly increasing, all >= t0). After reaching stop i the observer is called as
/// `observe(i, t, y)`; it returns true when it modified y.
template <class State, class Rhs, class Observer>
IntegrationStats integrate_dopri5(Rhs&& f, State& y, double t0, std::span<const double> stops,
                                  Observer&& observe, const StepControl& ctl = {}) {
  constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                   a65 = -5103.0 / 18656;
  constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                   e6 = 22.0 / 525, e7 = -1.0 / 40;

  IntegrationStats stats;
  if (stops.empty()) return stats;
  for (std::size_t i = 0; i < stops.size(); ++i) {
    if (stops[i] < t0 || (i > 0 && !(stops[i] > stops[i - 1])))
      throw ConfigError("integrate_dopri5: stop times must be >= t0 and strictly increasing");
  }

  State k1, k2, k3, k4, k5, k6, k7, tmp, y_new;
  auto eval = [&](double t, const State& state, State& out) {
    f(t, state, out);
    ++stats.rhs_evaluations;
  };

  double t = t0;
  std::size_t next = 0;
  while (next < stops.size() && stops[next] == t) {
    observe(next, t, y);
    ++next;
  }
  if (next == stops.size()) return stats;

  const double span = stops.back() - t0;
  eval(t, y, k1);
  double h = ctl.initial_step;
  if (h <= 0.0) {
    const auto scale = (ctl.atol + ctl.rtol * y.cwiseAbs().array());
    const double d0 = (y.cwiseAbs().array() / scale).maxCoeff();
    const double d1 = (k1.cwiseAbs().array() / scale).maxCoeff();
    h = (d0 > 1e-5 && d1 > 1e-5) ? 0.01 * d0 / d1 : 1e-6 * span;
    h = std::clamp(h, 1e-12 * span, 0.1 * span);
  }
  if (ctl.max_step > 0.0) h = std::min(h, ctl.max_step);

  bool last_rejected = false;
  const double h_floor = 64.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(stops.back()), span);

  while (next < stops.size()) {
    if (stats.accepted + stats.rejected >= ctl.max_steps)
      throw NumericalError("integrate_dopri5: maximum number of steps exceeded");
    const double target = stops[next];
    bool lands = false;
    double step = h;
    if (t + step >= target - 1e-12 * step) {
      step = target - t;
      lands = true;
    }
    if (step < h_floor) {
      std::ostringstream msg;
      msg << "integrate_dopri5: step size underflow at t = " << t << " (h = " << step << ")";
      throw NumericalError(msg.str());
    }

    tmp = y + step * a21 * k1;
    eval(t + c2 * step, tmp, k2);
    tmp = y + step * (a31 * k1 + a32 * k2);
    eval(t + c3 * step, tmp, k3);
    tmp = y + step * (a41 * k1 + a42 * k2 + a43 * k3);
    eval(t + c4 * step, tmp, k4);
    tmp = y + step * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    eval(t + c5 * step, tmp, k5);
    tmp = y + step * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    eval(t + step, tmp, k6);
    y_new = y + step * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    eval(t + step, y_new, k7);
    tmp = step * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const double err = detail::scaled_max_error(tmp, y, y_new, ctl.rtol, ctl.atol);

    if (!(err == err)) throw NumericalError("integrate_dopri5: non-finite error estimate");

    if (err <= 1.0) {
      ++stats.accepted;
      t = lands ? target : t + step;
      y.swap(y_new);
      k1.swap(k7);
      double fac = err > 0.0 ? 0.9 * std::pow(err, -0.2) : 5.0;
      fac = std::clamp(fac, 0.2, last_rejected ? 1.0 : 5.0);
      // A step shortened to land on a stop says nothing about the natural step size.
      if (!lands || step >= h) h = step * fac;
      last_rejected = false;
      if (lands) {
        if (observe(next, t, y)) eval(t, y, k1);
        ++next;
      }
    } else {
      ++stats.rejected;
      h = step * std::max(0.2, 0.9 * std::pow(err, -0.2));
      last_rejected = true;
    }
    if (ctl.max_step > 0.0) h = std::min(h, ctl.max_step);
  }
  return stats;
}

}  // namespace tlsphonon
