#pragma once

#include <string>

#include "common.hpp"
#include "ocp.hpp"

namespace etmpc {

/// An MPC solution anchored at the step it was computed.
struct PlanState {
    Trajectory x_hat;  ///< predicted states, offsets 0..N
    Trajectory u_mpc;  ///< planned inputs, offsets 0..N-1
    int anchor_time = 0;
    NlpSolution solution;  ///< kept for warm starting the next solve

    [[nodiscard]] int horizon() const { return static_cast<int>(u_mpc.size()); }
};

[[nodiscard]] inline PlanState make_plan(NlpSolution sol, int anchor_time) {
    PlanState p;
    p.x_hat = sol.x;
    p.u_mpc = sol.u;
    p.anchor_time = anchor_time;
    p.solution = std::move(sol);
    return p;
}

/// Markov state of the triggered loop: where the plant is, where the plan started, and
/// how long ago that was.
struct AugmentedState {
    Vector x_current;
    Vector x_anchor;
    int steps_since = 0;
    Vector params_current;  ///< measured time-varying parameters; empty for the pendulum
};

/// x_hat_i - x_i for the plan offset i - anchor_time.
[[nodiscard]] inline Vector compute_prediction_error(const PlanState& plan, const Vector& x_measured, int i) {
    const int offset = i - plan.anchor_time;
    require(offset >= 0 && offset <= plan.horizon() - 1,
            "compute_prediction_error: step " + std::to_string(i) + " outside plan anchored at " +
                std::to_string(plan.anchor_time));
    const Vector& predicted = plan.x_hat[static_cast<size_t>(offset)];
    require(predicted.size() == x_measured.size(), "compute_prediction_error: dimension mismatch");
    return predicted - x_measured;
}

}  // namespace etmpc
