#pragma once

#include <functional>
#include <limits>
#include <utility>

#include "autodiff.hpp"
#include "common.hpp"

namespace etmpc {

/// Local quadratic model of a cost term. The Hessian blocks are a positive
/// semidefinite (Gauss-Newton) approximation; the gradients are exact.
struct CostModel {
    double value = 0.0;
    Vector gx;
    Vector gu;
    Matrix hxx;
    Matrix hxu;
    Matrix huu;
};

using DynamicsFn = std::function<Vector(const Vector& x, const Vector& u, const Vector& p)>;
using JacobianFn = std::function<void(const Vector& x, const Vector& u, const Vector& p, Matrix& A, Matrix& B)>;
using StageCostFn = std::function<CostModel(const Vector& x, const Vector& u, const Vector& p)>;
using TerminalCostFn = std::function<CostModel(const Vector& x)>;
using StateConstraintFn = std::function<Vector(const Vector& x)>;
using StateConstraintJacobianFn = std::function<Matrix(const Vector& x)>;

/// Finite-horizon optimal control problem
///
///   min  sum_k [ l(x_k, u_k, p_k) + du_k' D du_k ] + m(x_N) + w sum_{k>=1} |max(0, h(x_k))|_1
///   s.t. x_0 = x_bar,  x_{k+1} = f(x_k, u_k, p_k),  u_lower <= u_k <= u_upper
///
/// with du_k = u_k - u_{k-1} and u_{-1} = `u_previous`. The state constraint
/// h(x) <= 0 is softened by an exact L1 penalty of weight `soft_penalty`.
struct OcpSpec {
    int horizon = 0;
    Index nx = 0;
    Index nu = 0;
    DynamicsFn dynamics;
    JacobianFn jacobian;  ///< optional; central differences are used when empty
    StageCostFn stage_cost;
    TerminalCostFn terminal_cost;
    Matrix input_change_weight;  ///< D
    Vector u_lower;
    Vector u_upper;
    StateConstraintFn state_constraint;  ///< optional
    StateConstraintJacobianFn state_constraint_jacobian;
    double soft_penalty = 1e3;
    Trajectory forecast;  ///< p_0 .. p_{N-1}; entries may be empty vectors
    Vector u_previous;

    [[nodiscard]] bool has_state_constraint() const { return static_cast<bool>(state_constraint); }

    [[nodiscard]] const Vector& parameter(int k) const { return forecast[static_cast<size_t>(k)]; }

    void validate() const {
        require(horizon >= 1, "OcpSpec: horizon must be >= 1");
        require(nx > 0 && nu > 0, "OcpSpec: empty state or input");
        require(static_cast<bool>(dynamics) && static_cast<bool>(stage_cost) && static_cast<bool>(terminal_cost),
                "OcpSpec: dynamics and costs are required");
        require(static_cast<int>(forecast.size()) == horizon, "OcpSpec: forecast length must equal the horizon");
        require(u_lower.size() == nu && u_upper.size() == nu, "OcpSpec: input bound dimension");
        require((u_lower.array() <= u_upper.array()).all(), "OcpSpec: inverted input bounds");
        require(input_change_weight.rows() == nu && input_change_weight.cols() == nu, "OcpSpec: D dimension");
        require(u_previous.size() == nu, "OcpSpec: u_previous dimension");
        require(!has_state_constraint() || (soft_penalty > 0.0 && static_cast<bool>(state_constraint_jacobian)),
                "OcpSpec: state constraint needs a Jacobian and a positive penalty");
        Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (input_change_weight + input_change_weight.transpose()));
        require(es.eigenvalues().minCoeff() >= -1e-12, "OcpSpec: D must be positive semidefinite");
    }
};

/// Decision variables of the transcribed problem plus solver diagnostics.
struct NlpSolution {
    Trajectory x;  ///< x_0 .. x_N
    Trajectory u;  ///< u_0 .. u_{N-1}
    double objective = std::numeric_limits<double>::quiet_NaN();
    double kkt_residual = std::numeric_limits<double>::quiet_NaN();
    double max_gap = std::numeric_limits<double>::quiet_NaN();
    int iterations = 0;
    bool converged = false;
    /// Multipliers of h(x_k) <= 0 for k = 1..N (entry k-1), each in [0, soft_penalty].
    /// Empty when unknown.
    Trajectory soft_multipliers;

    [[nodiscard]] int horizon() const { return static_cast<int>(u.size()); }
};

/// Wraps a scalar-generic discrete map into value and Jacobian callbacks.
/// `Map` must accept VectorT<double> and VectorT<AdScalar> for x and u.
template <typename Map>
void bind_dynamics(OcpSpec& spec, Map map) {
    spec.dynamics = [map](const Vector& x, const Vector& u, const Vector& p) -> Vector { return map(x, u, p); };
    spec.jacobian = [map](const Vector& x, const Vector& u, const Vector& p, Matrix& A, Matrix& B) {
        jacobian_autodiff(map, x, u, p, A, B);
    };
}

struct Linearization {
    std::vector<Matrix> A;
    std::vector<Matrix> B;
    Trajectory gaps;  ///< f(x_k, u_k, p_k) - x_{k+1}
    std::vector<CostModel> stage;
    CostModel terminal;
    Trajectory h;  ///< h(x_k) for k = 1..N (entry k-1)
    std::vector<Matrix> h_jacobian;
};

[[nodiscard]] inline Linearization linearize(const OcpSpec& spec, const Trajectory& x, const Trajectory& u) {
    const int N = spec.horizon;
    Linearization lin;
    lin.A.resize(N);
    lin.B.resize(N);
    lin.gaps.resize(N);
    lin.stage.resize(N);
    for (int k = 0; k < N; ++k) {
        const Vector& p = spec.parameter(k);
        if (spec.jacobian) {
            spec.jacobian(x[k], u[k], p, lin.A[k], lin.B[k]);
        } else {
            jacobian_central_difference(spec.dynamics, x[k], u[k], p, lin.A[k], lin.B[k]);
        }
        lin.gaps[k] = spec.dynamics(x[k], u[k], p) - x[k + 1];
        lin.stage[k] = spec.stage_cost(x[k], u[k], p);
    }
    lin.terminal = spec.terminal_cost(x[N]);
    if (spec.has_state_constraint()) {
        lin.h.resize(N);
        lin.h_jacobian.resize(N);
        for (int k = 1; k <= N; ++k) {
            lin.h[k - 1] = spec.state_constraint(x[k]);
            lin.h_jacobian[k - 1] = spec.state_constraint_jacobian(x[k]);
        }
    }
    return lin;
}

[[nodiscard]] inline double soft_violation(const Vector& h) { return h.cwiseMax(0.0).sum(); }

/// Objective including the soft-constraint penalty.
[[nodiscard]] inline double objective_value(const OcpSpec& spec, const Trajectory& x, const Trajectory& u) {
    const int N = spec.horizon;
    double J = 0.0;
    Vector prev = spec.u_previous;
    for (int k = 0; k < N; ++k) {
        J += spec.stage_cost(x[k], u[k], spec.parameter(k)).value;
        const Vector du = u[k] - prev;
        J += du.dot(spec.input_change_weight * du);
        prev = u[k];
    }
    J += spec.terminal_cost(x[N]).value;
    if (spec.has_state_constraint()) {
        for (int k = 1; k <= N; ++k) {
            J += spec.soft_penalty * soft_violation(spec.state_constraint(x[k]));
        }
    }
    return J;
}

[[nodiscard]] inline double max_shooting_gap(const Linearization& lin) {
    double g = 0.0;
    for (const Vector& c : lin.gaps) {
        g = std::max(g, inf_norm(c));
    }
    return g;
}

/// Gradient of the input-change term with respect to u_k.
[[nodiscard]] inline Vector input_change_gradient(const OcpSpec& spec, const Trajectory& u, int k) {
    const Matrix& D = spec.input_change_weight;
    const Vector prev = k == 0 ? spec.u_previous : u[k - 1];
    Vector g = 2.0 * D * (u[k] - prev);
    if (k + 1 < spec.horizon) {
        g -= 2.0 * D * (u[k + 1] - u[k]);
    }
    return g;
}

/// Soft-constraint multiplier for one state: supplied values are clipped to
/// [0, w]; without them the subgradient of the penalty is taken as w on violated
/// rows and 0 elsewhere.
[[nodiscard]] inline Vector soft_multiplier(const OcpSpec& spec, const Vector& h, const Trajectory& supplied, int k) {
    if (!supplied.empty()) {
        return supplied[static_cast<size_t>(k - 1)].cwiseMax(0.0).cwiseMin(spec.soft_penalty);
    }
    Vector mu = Vector::Zero(h.size());
    for (Index j = 0; j < h.size(); ++j) {
        if (h[j] > 1e-9) {
            mu[j] = spec.soft_penalty;
        }
    }
    return mu;
}

/// KKT residual from a precomputed linearization. Costates are obtained by the
/// adjoint recursion, which makes stationarity in the states exact; what remains is
/// the input gradient projected onto the bounds, the dynamic and initial-condition
/// infeasibility, and the complementarity of the soft-constraint multipliers.
[[nodiscard]] inline double kkt_residual(const OcpSpec& spec, const Vector& x_bar, const Trajectory& x,
                                         const Trajectory& u, const Linearization& lin,
                                         const Trajectory& soft_multipliers) {
    const int N = spec.horizon;
    double residual = std::max(inf_norm(x[0] - x_bar), max_shooting_gap(lin));

    auto add_soft = [&](int k, Vector& lambda) {
        if (!spec.has_state_constraint()) {
            return;
        }
        const Vector& h = lin.h[k - 1];
        const Vector mu = soft_multiplier(spec, h, soft_multipliers, k);
        lambda += lin.h_jacobian[k - 1].transpose() * mu;
        for (Index j = 0; j < h.size(); ++j) {
            const double comp = h[j] < 0.0 ? mu[j] * -h[j] : (spec.soft_penalty - mu[j]) * h[j];
            residual = std::max(residual, comp);
        }
    };

    Vector lambda = lin.terminal.gx;
    add_soft(N, lambda);
    for (int k = N - 1; k >= 0; --k) {
        const CostModel& c = lin.stage[k];
        const Vector grad_u = c.gu + input_change_gradient(spec, u, k) + lin.B[k].transpose() * lambda;
        const Vector projected = u[k] - clamp_input(u[k] - grad_u, spec.u_lower, spec.u_upper);
        residual = std::max(residual, inf_norm(projected));
        if (k > 0) {
            Vector next = c.gx + lin.A[k].transpose() * lambda;
            add_soft(k, next);
            lambda = std::move(next);
        }
    }
    return residual;
}

/// KKT residual of `point` for the problem `spec` started from `x_bar`.
[[nodiscard]] inline double kkt_residual(const OcpSpec& spec, const Vector& x_bar, const NlpSolution& point) {
    require(static_cast<int>(point.x.size()) == spec.horizon + 1 && point.horizon() == spec.horizon,
            "kkt_residual: point does not match the horizon");
    require(x_bar.size() == spec.nx, "kkt_residual: x_bar dimension");
    const Linearization lin = linearize(spec, point.x, point.u);
    return kkt_residual(spec, x_bar, point.x, point.u, lin, point.soft_multipliers);
}

/// Receding-horizon warm start: drops the first `n_applied` stages, then pads the
/// tail by holding the last input and simulating the model of `spec`.
[[nodiscard]] inline NlpSolution shift_warm_start(const OcpSpec& spec, const NlpSolution& prev, int n_applied) {
    const int N = prev.horizon();
    require(N == spec.horizon, "shift_warm_start: horizon mismatch");
    require(n_applied >= 0 && n_applied <= N, "shift_warm_start: n_applied out of range");
    if (n_applied == 0) {
        return prev;
    }
    NlpSolution next;
    next.x.resize(N + 1);
    next.u.resize(N);
    const Vector held = prev.u[N - 1];
    for (int k = 0; k <= N - n_applied; ++k) {
        next.x[k] = prev.x[k + n_applied];
    }
    for (int k = 0; k < N; ++k) {
        next.u[k] = k + n_applied < N ? prev.u[k + n_applied] : held;
    }
    for (int k = N - n_applied; k < N; ++k) {
        next.x[k + 1] = spec.dynamics(next.x[k], next.u[k], spec.parameter(k));
    }
    return next;
}

}  // namespace etmpc
