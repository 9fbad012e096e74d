#pragma once

// Torque-limited damped pendulum, the single continuous benchmark task.
// State (theta, omega); theta is measured from the hanging position, which
// is the stable equilibrium and the goal: bring the pendulum to rest at
// theta = 0. Cost penalizes angle, velocity and torque. Integration is
// semi-implicit Euler, which together with the friction term keeps the
// uncontrolled system dissipative at the nominal parameters (a property the
// tests rely on). Gravity and friction carry scale factors so evaluation can
// sweep off-nominal dynamics.

#include <algorithm>
#include <cmath>

#include "micro/common.hpp"
#include "micro/rng.hpp"

namespace micro {

struct PendulumParams {
    double gravity = 10.0;
    double mass = 1.0;
    double length = 1.0;
    double friction = 0.25;  // viscous damping coefficient
    double dt = 0.02;
    double torque_limit = 2.0;
    int horizon = 200;

    PendulumParams scaled(double gravity_mult, double friction_mult) const {
        require_arg(gravity_mult > 0.0 && friction_mult >= 0.0,
                    "PendulumParams::scaled: multipliers out of range");
        PendulumParams p = *this;
        p.gravity *= gravity_mult;
        p.friction *= friction_mult;
        return p;
    }
};

class PendulumEnv {
  public:
    static constexpr size_t obs_dim = 3;
    static constexpr size_t act_dim = 1;

    explicit PendulumEnv(PendulumParams params = {}) : p_(params) {}

    const PendulumParams& params() const { return p_; }

    /// Random start anywhere on the circle with mild spin.
    Vec reset(Rng& rng) {
        theta_ = rng.uniform(-kPi, kPi);
        omega_ = rng.uniform(-1.0, 1.0);
        t_ = 0;
        return observe();
    }

    Vec reset_to(double theta, double omega) {
        theta_ = wrap_angle(theta);
        omega_ = omega;
        t_ = 0;
        return observe();
    }

    double theta() const { return theta_; }
    double omega() const { return omega_; }
    int elapsed() const { return t_; }

    /// Observation (cos theta, sin theta, omega).
    Vec observe() const { return {std::cos(theta_), std::sin(theta_), omega_}; }

    struct StepResult {
        Vec obs;
        double reward;
        bool done;  // horizon reached (time limit, not a terminal state)
    };

    /// Advance one tick. Torque is clipped to the actuator limit; reward is
    /// evaluated at the pre-step state, gym style.
    StepResult step(double action) {
        const double u = std::clamp(action, -p_.torque_limit, p_.torque_limit);
        const double th = wrap_angle(theta_);
        const double reward = -(th * th + 0.1 * omega_ * omega_ + 0.001 * u * u);

        const double inertia = p_.mass * p_.length * p_.length;
        const double acc =
            -(p_.gravity / p_.length) * std::sin(theta_) - p_.friction * omega_ + u / inertia;
        omega_ += p_.dt * acc;
        theta_ = wrap_angle(theta_ + p_.dt * omega_);
        ++t_;
        return {observe(), reward, t_ >= p_.horizon};
    }

    /// Mechanical energy, zero at rest in the hanging position:
    /// E = 1/2 m l^2 w^2 + m g l (1 - cos theta) >= 0.
    double energy() const {
        const double kinetic = 0.5 * p_.mass * p_.length * p_.length * omega_ * omega_;
        const double potential = p_.mass * p_.gravity * p_.length * (1.0 - std::cos(theta_));
        return kinetic + potential;
    }

    /// The same reward step() charges, computed from an observation instead
    /// of internal state. The reward is known in closed form, so synthetic
    /// model transitions are labeled with it rather than a learned estimate.
    static double reward_from_obs(const Vec& obs, const Vec& action, const PendulumParams& p = {}) {
        require_arg(obs.size() == obs_dim && action.size() == act_dim,
                    "reward_from_obs: wrong arity");
        const double th = std::atan2(obs[1], obs[0]);
        const double w = obs[2];
        const double u = std::clamp(action[0], -p.torque_limit, p.torque_limit);
        return -(th * th + 0.1 * w * w + 0.001 * u * u);
    }

  private:
    PendulumParams p_;
    double theta_ = 0.0;
    double omega_ = 0.0;
    int t_ = 0;
};

}  // namespace micro
