#pragma once

#include <cmath>

#include "lyasafe/common.hpp"
#include "lyasafe/gp.hpp"

namespace lyasafe {

/// Inverted pendulum, angle measured from the upright equilibrium.
/// Continuous dynamics: m l^2 psidd = g m l sin(psi) - friction * psid + u.
struct PendulumParams {
  double mass = 0.15;        // kg
  double length = 0.5;       // m
  double gravity = 9.81;     // m/s^2
  double friction = 0.05;    // N m s
  double torque_max = 0.0;   // N m; 0 means "half the holding torque at 90 deg"
  double dt = 0.01;          // integrator step, s
  int control_substeps = 15; // RK4 substeps per control step

  double effective_torque_max() const {
    return torque_max > 0.0 ? torque_max : 0.5 * mass * gravity * length;
  }
  double inertia() const { return mass * length * length; }
  /// Beyond this angle the limited torque can no longer hold the pendulum.
  double saturation_angle() const {
    return std::asin(effective_torque_max() / (mass * gravity * length));
  }
  void validate() const {
    require(mass > 0 && length > 0 && gravity > 0 && friction >= 0 && dt > 0 &&
                control_substeps >= 1,
            "pendulum: parameters must be positive");
  }
};

namespace detail {

inline Vec pendulum_deriv(const PendulumParams& p, const Vec& s, double torque) {
  Vec d(2);
  d(0) = s(1);
  d(1) = (p.gravity / p.length) * std::sin(s(0)) - p.friction / p.inertia() * s(1) +
         torque / p.inertia();
  return d;
}

inline Vec rk4_substep(const PendulumParams& p, const Vec& s, double torque) {
  const double h = p.dt;
  const Vec k1 = pendulum_deriv(p, s, torque);
  const Vec k2 = pendulum_deriv(p, s + 0.5 * h * k1, torque);
  const Vec k3 = pendulum_deriv(p, s + 0.5 * h * k2, torque);
  const Vec k4 = pendulum_deriv(p, s + h * k3, torque);
  return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

struct PendulumStep {
  Vec state;
  bool torque_clipped = false;
};

/// One control step of the true plant: zero-order-hold torque through
/// `control_substeps` RK4 substeps. Torque outside the limit is clipped and
/// flagged.
inline PendulumStep pendulum_step_true(const PendulumParams& p, const Vec& state, double torque) {
  const double cap = p.effective_torque_max();
  PendulumStep out;
  out.torque_clipped = std::abs(torque) > cap;
  const double u = std::clamp(torque, -cap, cap);
  Vec s = state;
  for (int i = 0; i < p.control_substeps; ++i) s = detail::rk4_substep(p, s, u);
  out.state = std::move(s);
  return out;
}

/// Mechanical energy of the unforced pendulum (upright zero reference).
inline double pendulum_energy(const PendulumParams& p, const Vec& state) {
  return 0.5 * p.inertia() * state(1) * state(1) +
         p.mass * p.gravity * p.length * (std::cos(state(0)) - 1.0);
}

/// Prior model: exact zero-order-hold discretization over the control period
/// of the dynamics linearized at the upright position, with a wrong (lower)
/// mass and no friction. The linearization matrix has the closed form of a
/// hyperbolic rotation since the upright equilibrium is a saddle.
inline AffinePrior pendulum_prior(const PendulumParams& p, double prior_mass) {
  require(prior_mass > 0.0, "pendulum prior: mass must be positive");
  const double T = p.dt * p.control_substeps;
  const double w = std::sqrt(p.gravity / p.length);
  const double ch = std::cosh(w * T);
  const double sh = std::sinh(w * T);
  Mat A(2, 2);
  A << ch, sh / w, w * sh, ch;
  Mat B(2, 1);
  const double inertia_prior = prior_mass * p.length * p.length;
  B << (ch - 1.0) / (w * w) / inertia_prior, sh / w / inertia_prior;
  return {A, B};
}

}  // namespace lyasafe
