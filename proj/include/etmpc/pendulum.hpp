#pragma once

#include <cmath>

#include "autodiff.hpp"
#include "integrators.hpp"
#include "lqr.hpp"
#include "ocp.hpp"
#include "random.hpp"

namespace etmpc {

/// Cart pendulum. State [eta, v, beta, omega]: cart position (m), cart velocity (m/s),
/// pole angle from vertical (rad), pole angular velocity (rad/s). Input: cart force (N).
struct PendulumParams {
    double pole_mass = 0.1;    ///< m
    double total_mass = 1.1;   ///< M, cart plus pole
    double pole_length = 1.0;  ///< l
    double gravity = 9.81;
    double dt = 0.1;
    double force_limit = 25.0;
    double noise_std = 1.0;  ///< std of the additive disturbance on omega per step
    IntegrationScheme scheme = IntegrationScheme::rk4;
};

inline constexpr Index pendulum_nx = 4;
inline constexpr Index pendulum_nu = 1;
inline constexpr Index pendulum_angle = 2;

template <typename T>
[[nodiscard]] VectorT<T> pendulum_derivatives(const PendulumParams& prm, const VectorT<T>& x, const T& u) {
    using std::cos;
    using std::sin;
    const double m = prm.pole_mass;
    const double M = prm.total_mass;
    const double l = prm.pole_length;
    const double g = prm.gravity;
    const T& v = x[1];
    const T& beta = x[2];
    const T& omega = x[3];
    const T s = sin(beta);
    const T c = cos(beta);
    const T push = u + m * l * omega * omega * s;

    VectorT<T> dx(4);
    dx[0] = v;
    dx[1] = (m * g * s * c - (4.0 / 3.0) * push) / (m * c * c - (4.0 / 3.0) * M);
    dx[2] = omega;
    dx[3] = (M * g * s - c * push) / ((4.0 / 3.0) * M * l - m * l * c * c);
    return dx;
}

/// Noise-free discrete map; this is also the MPC prediction model.
template <typename T>
[[nodiscard]] VectorT<T> pendulum_model_step(const PendulumParams& prm, const VectorT<T>& x, const VectorT<T>& u) {
    const T force = u[0];
    auto f = [&prm](const VectorT<T>& xs, const T& us) { return pendulum_derivatives<T>(prm, xs, us); };
    return integrate_step(prm.scheme, f, x, force, prm.dt);
}

/// True plant: model step plus the disturbance w = (0, 0, 0, disturbance).
[[nodiscard]] inline Vector pendulum_plant_step(const PendulumParams& prm, const Vector& x, const Vector& u,
                                                double disturbance) {
    Vector next = pendulum_model_step<double>(prm, x, u);
    next[3] += disturbance;
    return next;
}

[[nodiscard]] inline Vector pendulum_plant_step(const PendulumParams& prm, const Vector& x, const Vector& u, Rng& rng) {
    return pendulum_plant_step(prm, x, u, rng.normal(0.0, prm.noise_std));
}

struct PendulumInitialRanges {
    double velocity = 1.0;
    double angle = 0.78;
    double angular_velocity = 1.0;
};

/// x_0 = [0, U(-1, 1), U(-0.78, 0.78), U(-1, 1)] with the default ranges.
[[nodiscard]] inline Vector sample_pendulum_initial_state(const PendulumInitialRanges& r, Rng& rng) {
    Vector x(4);
    x[0] = 0.0;
    x[1] = rng.uniform(-r.velocity, r.velocity);
    x[2] = rng.uniform(-r.angle, r.angle);
    x[3] = rng.uniform(-r.angular_velocity, r.angular_velocity);
    return x;
}

/// Small-angle linearization about the upright equilibrium (continuous time).
[[nodiscard]] inline LtiModel pendulum_error_model(const PendulumParams& prm) {
    const double m = prm.pole_mass;
    const double M = prm.total_mass;
    const double l = prm.pole_length;
    const double g = prm.gravity;
    const double denom = (4.0 / 3.0) * M - m;
    Matrix A = Matrix::Zero(4, 4);
    A(0, 1) = 1.0;
    A(1, 2) = -m * g / denom;
    A(2, 3) = 1.0;
    A(3, 2) = M * g / (l * denom);
    Matrix B = Matrix::Zero(4, 1);
    B(1, 0) = 1.0 / (M - 0.75 * m);
    B(3, 0) = -1.0 / (l * denom);
    return {"pendulum", A, B, false, 0.0};
}

/// Angle-squared cost; exact quadratic so the Gauss-Newton Hessian is exact.
[[nodiscard]] inline CostModel pendulum_angle_cost(const Vector& x, Index nu) {
    CostModel c;
    const double beta = x[pendulum_angle];
    c.value = beta * beta;
    c.gx = Vector::Zero(4);
    c.gx[pendulum_angle] = 2.0 * beta;
    c.hxx = Matrix::Zero(4, 4);
    c.hxx(pendulum_angle, pendulum_angle) = 2.0;
    c.gu = Vector::Zero(nu);
    c.hxu = Matrix::Zero(4, nu);
    c.huu = Matrix::Zero(nu, nu);
    return c;
}

struct PendulumMpcSettings {
    int horizon = 20;
    double input_change_weight = 1e-4;
};

/// MPC problem: stage cost beta^2, terminal beta_N^2, |u| <= force limit.
[[nodiscard]] inline OcpSpec pendulum_ocp(const PendulumParams& prm, const PendulumMpcSettings& mpc) {
    OcpSpec spec;
    spec.horizon = mpc.horizon;
    spec.nx = pendulum_nx;
    spec.nu = pendulum_nu;
    bind_dynamics(spec, [prm](const auto& x, const auto& u, const Vector&) { return pendulum_model_step(prm, x, u); });
    spec.stage_cost = [](const Vector& x, const Vector& u, const Vector&) { return pendulum_angle_cost(x, u.size()); };
    spec.terminal_cost = [](const Vector& x) { return pendulum_angle_cost(x, 0); };
    spec.input_change_weight = Matrix::Constant(1, 1, mpc.input_change_weight);
    spec.u_lower = Vector::Constant(1, -prm.force_limit);
    spec.u_upper = Vector::Constant(1, prm.force_limit);
    spec.forecast.assign(static_cast<size_t>(mpc.horizon), Vector());
    spec.u_previous = Vector::Zero(1);
    return spec;
}

/// Per-step learning cost beta_k^2 + compute_cost * a_k.
[[nodiscard]] inline double pendulum_step_cost(const Vector& x, int action, double compute_cost) {
    const double beta = x[pendulum_angle];
    return beta * beta + compute_cost * action;
}

[[nodiscard]] inline double pendulum_terminal_cost(const Vector& x) {
    const double beta = x[pendulum_angle];
    return beta * beta;
}

}  // namespace etmpc
