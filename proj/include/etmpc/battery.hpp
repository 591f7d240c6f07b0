#pragma once

#include <algorithm>

#include "autodiff.hpp"
#include "lqr.hpp"
#include "market.hpp"
#include "ocp.hpp"

namespace etmpc {

/// Battery storage trading on a balance market. State: state of charge in [0, 1].
/// Input: traded power in kW, positive when selling. Parameters p = [P, lambda].
struct BatteryParams {
    double capacity = 10.0;             ///< C, kWh
    double dt_hours = 10.0 / 3600.0;    ///< delta
    double compute_power = 0.1;         ///< eta_c, kW drawn while the MPC runs
    double trade_fraction = 0.1;        ///< share of capacity tradable per step
    double mean_price = 0.5;            ///< lambda bar, $/kWh
    double initial_soc_min = 0.2;
    double initial_soc_max = 0.8;

    [[nodiscard]] double trade_limit() const { return trade_fraction * capacity / dt_hours; }
};

inline constexpr Index battery_nx = 1;
inline constexpr Index battery_nu = 1;

/// True plant: x - (delta / C)(u - P - eta_c a), saturated into [0, 1].
[[nodiscard]] inline double battery_plant_step(const BatteryParams& prm, double x, double u, double production,
                                               int action) {
    const double next = x - prm.dt_hours / prm.capacity * (u - production - prm.compute_power * action);
    return std::clamp(next, 0.0, 1.0);
}

/// Unsaturated prediction model used by the MPC.
template <typename T>
[[nodiscard]] VectorT<T> battery_model_step(const BatteryParams& prm, const VectorT<T>& x, const VectorT<T>& u,
                                            const Vector& p) {
    VectorT<T> next(1);
    next[0] = x[0] - (prm.dt_hours / prm.capacity) * (u[0] - p[0]);
    return next;
}

/// Error model eps+ = eps - (delta / C) u used for the LQR gain.
[[nodiscard]] inline LtiModel battery_error_model(const BatteryParams& prm) {
    return {"battery", Matrix::Identity(1, 1), Matrix::Constant(1, 1, -prm.dt_hours / prm.capacity), true,
            prm.dt_hours * 3600.0};
}

struct BatteryMpcSettings {
    int horizon = 20;
    double input_change_weight = 0.0;
    double soft_penalty = 1e3;
};

/// Profit maximization written as cost minimization: stage -lambda u delta,
/// terminal -lambda_bar C x_N, soft constraint 0 <= x_k <= 1.
[[nodiscard]] inline OcpSpec battery_ocp(const BatteryParams& prm, const BatteryMpcSettings& mpc) {
    OcpSpec spec;
    spec.horizon = mpc.horizon;
    spec.nx = battery_nx;
    spec.nu = battery_nu;
    bind_dynamics(spec, [prm](const auto& x, const auto& u, const Vector& p) { return battery_model_step(prm, x, u, p); });
    const double dt = prm.dt_hours;
    spec.stage_cost = [dt](const Vector& x, const Vector& u, const Vector& p) {
        CostModel c;
        c.value = -p[1] * u[0] * dt;
        c.gx = Vector::Zero(x.size());
        c.gu = Vector::Constant(1, -p[1] * dt);
        c.hxx = Matrix::Zero(x.size(), x.size());
        c.hxu = Matrix::Zero(x.size(), 1);
        c.huu = Matrix::Zero(1, 1);
        return c;
    };
    const double terminal_weight = prm.mean_price * prm.capacity;
    spec.terminal_cost = [terminal_weight](const Vector& x) {
        CostModel c;
        c.value = -terminal_weight * x[0];
        c.gx = Vector::Constant(1, -terminal_weight);
        c.hxx = Matrix::Zero(1, 1);
        c.gu = Vector::Zero(0);
        c.hxu = Matrix::Zero(1, 0);
        c.huu = Matrix::Zero(0, 0);
        return c;
    };
    spec.state_constraint = [](const Vector& x) {
        Vector h(2);
        h << -x[0], x[0] - 1.0;
        return h;
    };
    spec.state_constraint_jacobian = [](const Vector&) {
        Matrix J(2, 1);
        J << -1.0, 1.0;
        return J;
    };
    spec.soft_penalty = mpc.soft_penalty;
    spec.input_change_weight = Matrix::Constant(1, 1, mpc.input_change_weight);
    const double limit = prm.trade_limit();
    spec.u_lower = Vector::Constant(1, -limit);
    spec.u_upper = Vector::Constant(1, limit);
    spec.forecast.assign(static_cast<size_t>(mpc.horizon), Vector::Zero(2));
    spec.u_previous = Vector::Zero(1);
    return spec;
}

/// Fills the OCP parameters from a forecast: p_k = [P_hat_k, lambda_hat_k].
inline void set_battery_forecast(OcpSpec& spec, const Forecast& f) {
    require(f.production.size() == spec.horizon && f.price.size() == spec.horizon,
            "set_battery_forecast: forecast length must equal the horizon");
    for (int k = 0; k < spec.horizon; ++k) {
        Vector p(2);
        p << f.production[k], f.price[k];
        spec.forecast[static_cast<size_t>(k)] = p;
    }
}

/// Per-step learning cost -lambda u delta (negated revenue).
[[nodiscard]] inline double battery_step_cost(const BatteryParams& prm, double u, double price) {
    return -price * u * prm.dt_hours;
}

/// Terminal learning cost -lambda_bar C x_T.
[[nodiscard]] inline double battery_terminal_cost(const BatteryParams& prm, double x) {
    return -prm.mean_price * prm.capacity * x;
}

}  // namespace etmpc
