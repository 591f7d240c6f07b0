#pragma once

#include <Eigen/Core>

namespace etmpc {

enum class IntegrationScheme { rk4, euler };

/// Classical fourth-order Runge-Kutta step with the input held constant over the step.
///
/// `derivative(x, u)` must return dx/dt with the same type as `x`. The state type is
/// a template parameter so the same code path runs on plain doubles and on
/// automatic-differentiation scalars.
template <typename State, typename Input, typename Derivative, typename Scalar>
[[nodiscard]] State rk4_step(Derivative&& derivative, const State& x, const Input& u, Scalar dt) {
    const State k1 = derivative(x, u);
    const State k2 = derivative(State(x + (dt / 2.0) * k1), u);
    const State k3 = derivative(State(x + (dt / 2.0) * k2), u);
    const State k4 = derivative(State(x + dt * k3), u);
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

template <typename State, typename Input, typename Derivative, typename Scalar>
[[nodiscard]] State euler_step(Derivative&& derivative, const State& x, const Input& u, Scalar dt) {
    return x + dt * derivative(x, u);
}

template <typename State, typename Input, typename Derivative, typename Scalar>
[[nodiscard]] State integrate_step(IntegrationScheme scheme, Derivative&& derivative, const State& x,
                                   const Input& u, Scalar dt) {
    if (scheme == IntegrationScheme::euler) {
        return euler_step(derivative, x, u, dt);
    }
    return rk4_step(derivative, x, u, dt);
}

}  // namespace etmpc
