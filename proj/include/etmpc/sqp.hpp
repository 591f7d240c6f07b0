#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "ocp.hpp"
#include "qp.hpp"

namespace etmpc {

struct SqpOptions {
    int max_iterations = 100;
    double kkt_tolerance = 1e-6;
    double gap_tolerance = 1e-8;
    int max_backtracks = 20;
    double backtrack_factor = 0.5;
    double armijo = 1e-4;
    /// Levenberg damping added to the condensed Hessian, relative to its largest diagonal entry.
    double regularization = 1e-9;
};

struct SqpIterationLog {
    int iteration = 0;
    double kkt = 0.0;
    double max_gap = 0.0;
    double merit = 0.0;
    double step = 0.0;
    int qp_iterations = 0;
};

struct SolveDiagnostics {
    std::vector<SqpIterationLog> iterations;
};

namespace detail {

struct CondensedStep {
    Trajectory dx;
    Trajectory du;
    Trajectory slack;     ///< per k = 1..N
    Trajectory soft_mu;   ///< per k = 1..N
    double model_decrease = 0.0;  ///< directional derivative of the merit along the step
    Vector costate_bound;         ///< max |costate| estimate for the merit penalty
    int qp_iterations = 0;
    bool ok = false;
};

/// Builds and solves the SQP subproblem with the states eliminated:
/// dx_0 = 0, dx_{k+1} = A_k dx_k + B_k du_k + c_k  =>  dx_k = Gamma_k du + psi_k.
inline CondensedStep condensed_step(const OcpSpec& spec, const Trajectory& u, const Linearization& lin,
                                    double merit_penalty, double regularization) {
    const int N = spec.horizon;
    const Index nx = spec.nx;
    const Index nu = spec.nu;
    const Index nU = N * nu;
    const Index nh = spec.has_state_constraint() ? lin.h.front().size() : 0;
    const Index nS = N * nh;

    std::vector<Matrix> Gamma(N + 1, Matrix::Zero(nx, nU));
    Trajectory psi(N + 1, Vector::Zero(nx));
    for (int k = 0; k < N; ++k) {
        Gamma[k + 1].leftCols((k + 1) * nu).noalias() = lin.A[k] * Gamma[k].leftCols((k + 1) * nu);
        Gamma[k + 1].middleCols(k * nu, nu) += lin.B[k];
        psi[k + 1] = lin.A[k] * psi[k] + lin.gaps[k];
    }

    Matrix H = Matrix::Zero(nU, nU);
    Vector g = Vector::Zero(nU);
    for (int k = 0; k < N; ++k) {
        const CostModel& c = lin.stage[k];
        const Index cols = k * nu;  // Gamma_k only depends on du_0 .. du_{k-1}
        if (cols > 0) {
            const auto G = Gamma[k].leftCols(cols);
            H.topLeftCorner(cols, cols).noalias() += G.transpose() * c.hxx * G;
            const Matrix cross = G.transpose() * c.hxu;
            H.block(0, k * nu, cols, nu) += cross;
            H.block(k * nu, 0, nu, cols) += cross.transpose();
            g.head(cols).noalias() += G.transpose() * (c.gx + c.hxx * psi[k]);
        }
        H.block(k * nu, k * nu, nu, nu) += c.huu;
        g.segment(k * nu, nu) += c.gu + c.hxu.transpose() * psi[k];
    }
    {
        const CostModel& c = lin.terminal;
        H.noalias() += Gamma[N].transpose() * c.hxx * Gamma[N];
        g.noalias() += Gamma[N].transpose() * (c.gx + c.hxx * psi[N]);
    }
    const Matrix& D = spec.input_change_weight;
    for (int k = 0; k < N; ++k) {
        g.segment(k * nu, nu) += input_change_gradient(spec, u, k);
        H.block(k * nu, k * nu, nu, nu) += 2.0 * D;
        if (k > 0) {
            H.block(k * nu, (k - 1) * nu, nu, nu) -= 2.0 * D;
            H.block((k - 1) * nu, k * nu, nu, nu) -= 2.0 * D;
            H.block((k - 1) * nu, (k - 1) * nu, nu, nu) += 2.0 * D;
        }
    }

    QpProblem qp;
    const Index n = nU + nS;
    const double damping = regularization * std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
    qp.H = Matrix::Zero(n, n);
    qp.H.topLeftCorner(nU, nU) = 0.5 * (H + H.transpose());
    qp.H.diagonal().array() += damping;
    qp.f = Vector::Zero(n);
    qp.f.head(nU) = g;
    qp.lower.resize(n);
    qp.upper.resize(n);
    for (int k = 0; k < N; ++k) {
        qp.lower.segment(k * nu, nu) = spec.u_lower - u[k];
        qp.upper.segment(k * nu, nu) = spec.u_upper - u[k];
    }
    qp.lower.head(nU) = qp.lower.head(nU).cwiseMin(0.0);
    qp.upper.head(nU) = qp.upper.head(nU).cwiseMax(0.0);

    Vector z0 = Vector::Zero(n);
    double current_violation = 0.0;
    if (nS > 0) {
        qp.f.tail(nS).setConstant(spec.soft_penalty);
        qp.lower.tail(nS).setZero();
        qp.upper.tail(nS).setConstant(std::numeric_limits<double>::infinity());
        qp.C = Matrix::Zero(nS, n);
        qp.d = Vector::Zero(nS);
        for (int k = 1; k <= N; ++k) {
            const Matrix& Jh = lin.h_jacobian[k - 1];
            const Index row = (k - 1) * nh;
            qp.C.block(row, 0, nh, nU) = Jh * Gamma[k];
            qp.C.block(row, nU + row, nh, nh) = -Matrix::Identity(nh, nh);
            const Vector offset = lin.h[k - 1] + Jh * psi[k];
            qp.d.segment(row, nh) = -offset;
            z0.segment(nU + row, nh) = offset.cwiseMax(0.0);
            current_violation += soft_violation(lin.h[k - 1]);
        }
    } else {
        qp.C.resize(0, n);
        qp.d.resize(0);
    }

    const QpResult sol = solve_qp(qp, z0);
    CondensedStep step;
    step.qp_iterations = sol.iterations;
    if (!sol.optimal || !sol.z.allFinite()) {
        return step;
    }

    const Vector du = sol.z.head(nU);
    step.du.resize(N);
    step.dx.resize(N + 1);
    for (int k = 0; k < N; ++k) {
        step.du[k] = du.segment(k * nu, nu);
    }
    step.dx[0] = Vector::Zero(nx);
    for (int k = 0; k < N; ++k) {
        step.dx[k + 1] = lin.A[k] * step.dx[k] + lin.B[k] * step.du[k] + lin.gaps[k];
    }
    double slack_sum = 0.0;
    if (nS > 0) {
        step.slack.resize(N);
        step.soft_mu.resize(N);
        for (int k = 1; k <= N; ++k) {
            const Index row = (k - 1) * nh;
            step.slack[k - 1] = sol.z.segment(nU + row, nh);
            step.soft_mu[k - 1] = sol.general_multipliers.segment(row, nh);
            slack_sum += step.slack[k - 1].sum();
        }
    }

    // Costates of the quadratic model at the new point bound the multipliers of the
    // dynamics; the L1 merit penalty has to dominate them.
    Vector lambda = lin.terminal.gx + lin.terminal.hxx * step.dx[N];
    if (nS > 0) {
        lambda += lin.h_jacobian[N - 1].transpose() * step.soft_mu[N - 1];
    }
    double lambda_max = inf_norm(lambda);
    for (int k = N - 1; k >= 1; --k) {
        const CostModel& c = lin.stage[k];
        Vector next = c.gx + c.hxx * step.dx[k] + c.hxu * step.du[k] + lin.A[k].transpose() * lambda;
        if (nS > 0) {
            next += lin.h_jacobian[k - 1].transpose() * step.soft_mu[k - 1];
        }
        lambda = std::move(next);
        lambda_max = std::max(lambda_max, inf_norm(lambda));
    }
    step.costate_bound = Vector::Constant(1, lambda_max);

    double gap_l1 = 0.0;
    for (const Vector& c : lin.gaps) {
        gap_l1 += c.lpNorm<1>();
    }
    // Directional derivative of the objective along the full step (dx, du).
    double slope = lin.terminal.gx.dot(step.dx[N]);
    for (int k = 0; k < N; ++k) {
        slope += lin.stage[k].gx.dot(step.dx[k]) + lin.stage[k].gu.dot(step.du[k]) +
                 input_change_gradient(spec, u, k).dot(step.du[k]);
    }
    const double penalty = std::max(merit_penalty, 1.5 * lambda_max + 1e-3);
    step.model_decrease = slope + spec.soft_penalty * (slack_sum - current_violation) - penalty * gap_l1;
    step.ok = true;
    return step;
}

inline double merit(const OcpSpec& spec, const Trajectory& x, const Trajectory& u, double penalty) {
    double gap_l1 = 0.0;
    for (int k = 0; k < spec.horizon; ++k) {
        gap_l1 += (spec.dynamics(x[k], u[k], spec.parameter(k)) - x[k + 1]).lpNorm<1>();
    }
    return objective_value(spec, x, u) + penalty * gap_l1;
}

}  // namespace detail

/// Direct multiple shooting with a Gauss-Newton SQP iteration and an L1 merit line search.
///
/// Returns the final iterate. `converged` is set when the KKT residual is at most
/// `kkt_tolerance` and every shooting gap is at most `gap_tolerance`; otherwise the
/// best iterate reached after `max_iterations` (or a failed line search) is returned.
/// Throws SolverFailure on non-finite values.
[[nodiscard]] inline NlpSolution solve_ocp(const OcpSpec& spec, const Vector& x_bar,
                                           const std::optional<NlpSolution>& warm_start = std::nullopt,
                                           const SqpOptions& options = {}, SolveDiagnostics* diagnostics = nullptr) {
    spec.validate();
    require(x_bar.size() == spec.nx, "solve_ocp: x_bar dimension mismatch");
    if (!x_bar.allFinite()) {
        throw SolverFailure("solve_ocp: non-finite measured state");
    }
    const int N = spec.horizon;

    Trajectory x(N + 1);
    Trajectory u(N);
    if (warm_start && warm_start->horizon() == N && static_cast<int>(warm_start->x.size()) == N + 1) {
        x = warm_start->x;
        for (int k = 0; k < N; ++k) {
            u[k] = clamp_input(warm_start->u[k], spec.u_lower, spec.u_upper);
        }
    } else {
        const Vector u0 = clamp_input(Vector::Zero(spec.nu), spec.u_lower, spec.u_upper);
        std::fill(x.begin(), x.end(), x_bar);
        std::fill(u.begin(), u.end(), u0);
    }
    x[0] = x_bar;

    NlpSolution out;
    Trajectory soft_mu;
    double penalty = 1.0;
    int iteration = 0;
    for (;; ++iteration) {
        const Linearization lin = linearize(spec, x, u);
        const double kkt = kkt_residual(spec, x_bar, x, u, lin, soft_mu);
        const double gap = max_shooting_gap(lin);
        if (!std::isfinite(kkt) || !std::isfinite(gap)) {
            throw SolverFailure("solve_ocp: non-finite derivatives or residual");
        }
        out.kkt_residual = kkt;
        out.max_gap = gap;
        out.converged = false;
        if (kkt <= options.kkt_tolerance && gap <= options.gap_tolerance) {
            out.converged = true;
            // Close the remaining gaps by simulating the inputs; on unstable dynamics
            // even tiny gaps grow along the horizon. If that costs optimality, take
            // another step and retry.
            Trajectory xs(N + 1);
            xs[0] = x_bar;
            for (int k = 0; k < N; ++k) {
                xs[k + 1] = spec.dynamics(xs[k], u[k], spec.parameter(k));
            }
            const Linearization lin_s = linearize(spec, xs, u);
            const double kkt_s = kkt_residual(spec, x_bar, xs, u, lin_s, soft_mu);
            if (gap == 0.0 || (std::isfinite(kkt_s) && kkt_s <= options.kkt_tolerance)) {
                x = std::move(xs);
                out.kkt_residual = gap == 0.0 ? kkt : kkt_s;
                out.max_gap = max_shooting_gap(lin_s);
                break;
            }
        }
        if (iteration >= options.max_iterations) {
            break;
        }

        const detail::CondensedStep step = detail::condensed_step(spec, u, lin, penalty, options.regularization);
        if (!step.ok) {
            break;
        }
        penalty = std::max(penalty, 1.5 * step.costate_bound[0] + 1e-3);
        const double phi0 = detail::merit(spec, x, u, penalty);
        if (!std::isfinite(phi0)) {
            throw SolverFailure("solve_ocp: non-finite objective");
        }

        double alpha = 1.0;
        bool accepted = false;
        Trajectory xt(N + 1);
        Trajectory ut(N);
        for (int b = 0; b <= options.max_backtracks; ++b) {
            for (int k = 0; k <= N; ++k) {
                xt[k] = x[k] + alpha * step.dx[k];
            }
            for (int k = 0; k < N; ++k) {
                ut[k] = clamp_input(u[k] + alpha * step.du[k], spec.u_lower, spec.u_upper);
            }
            const double phi = detail::merit(spec, xt, ut, penalty);
            if (std::isfinite(phi) && phi <= phi0 + options.armijo * alpha * std::min(step.model_decrease, 0.0)) {
                accepted = true;
                break;
            }
            alpha *= options.backtrack_factor;
        }
        if (diagnostics) {
            diagnostics->iterations.push_back({iteration, kkt, gap, phi0, accepted ? alpha : 0.0, step.qp_iterations});
        }
        if (!accepted) {
            break;
        }
        x = std::move(xt);
        u = std::move(ut);
        x[0] = x_bar;
        soft_mu = step.soft_mu;
        xt.assign(N + 1, Vector());
        ut.assign(N, Vector());
    }

    out.x = std::move(x);
    out.u = std::move(u);
    out.iterations = iteration;
    out.soft_multipliers = std::move(soft_mu);
    out.objective = objective_value(spec, out.x, out.u);
    if (!std::isfinite(out.objective)) {
        throw SolverFailure("solve_ocp: non-finite objective");
    }
    return out;
}

}  // namespace etmpc
