#pragma once

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "common.hpp"

namespace etmpc {

/// Strictly convex QP
///
///   min  0.5 z'Hz + f'z   s.t.  lower <= z <= upper,  C z <= d.
///
/// `upper` entries may be +infinity and `lower` entries -infinity.
struct QpProblem {
    Matrix H;
    Vector f;
    Vector lower;
    Vector upper;
    Matrix C;
    Vector d;
};

struct QpOptions {
    int max_iterations = 0;  ///< 0 selects 50 (n + m) + 100
    double step_tolerance = 1e-13;
    double multiplier_tolerance = 1e-11;
};

/// Stationarity at the solution reads H z + f + C' general + bound = 0, with
/// general >= 0 and bound_j > 0 (< 0) when z_j sits at its upper (lower) bound.
struct QpResult {
    Vector z;
    Vector bound_multipliers;
    Vector general_multipliers;
    int iterations = 0;
    bool optimal = false;
};

/// Primal active-set method. Bounds in the working set are handled by fixing
/// variables, so each iteration factorizes only the free block plus active rows.
/// `z0` must satisfy all constraints.
[[nodiscard]] inline QpResult solve_qp(const QpProblem& qp, const Vector& z0, QpOptions options = {}) {
    const Index n = qp.H.rows();
    const Index m = qp.C.rows();
    require(qp.H.cols() == n && qp.f.size() == n && qp.lower.size() == n && qp.upper.size() == n,
            "solve_qp: dimension mismatch");
    require(m == qp.d.size() && (m == 0 || qp.C.cols() == n), "solve_qp: constraint dimension mismatch");
    require(z0.size() == n, "solve_qp: start point dimension mismatch");
    const int max_iterations = options.max_iterations > 0 ? options.max_iterations : static_cast<int>(50 * (n + m) + 100);

    enum Status : signed char { free_var = 0, at_lower = -1, at_upper = 1 };
    std::vector<Status> status(static_cast<size_t>(n), free_var);
    std::vector<char> in_working(static_cast<size_t>(m), 0);
    std::vector<Index> working;

    Vector z = z0.cwiseMax(qp.lower).cwiseMin(qp.upper);
    for (Index j = 0; j < n; ++j) {
        const double scale = 1e-12 * std::max(1.0, std::abs(z[j]));
        if (z[j] <= qp.lower[j] + scale) {
            status[j] = at_lower;
            z[j] = qp.lower[j];
        } else if (z[j] >= qp.upper[j] - scale) {
            status[j] = at_upper;
            z[j] = qp.upper[j];
        }
    }

    QpResult result;
    std::vector<Index> free_idx;
    free_idx.reserve(static_cast<size_t>(n));
    Vector p = Vector::Zero(n);
    // Set after an unblocked full step: the iterate then minimizes over the working set
    // and round-off in p must not trigger further (tiny) steps.
    bool subspace_minimum = false;

    for (int iter = 0; iter < max_iterations; ++iter) {
        result.iterations = iter + 1;
        const Vector g = qp.H * z + qp.f;

        free_idx.clear();
        for (Index j = 0; j < n; ++j) {
            if (status[j] == free_var) {
                free_idx.push_back(j);
            }
        }
        const Index nf = static_cast<Index>(free_idx.size());
        const Index nw = static_cast<Index>(working.size());

        Vector mu = Vector::Zero(nw);
        p.setZero();
        if (nf + nw > 0) {
            Matrix K = Matrix::Zero(nf + nw, nf + nw);
            Vector rhs = Vector::Zero(nf + nw);
            for (Index a = 0; a < nf; ++a) {
                rhs[a] = -g[free_idx[a]];
                for (Index b = 0; b < nf; ++b) {
                    K(a, b) = qp.H(free_idx[a], free_idx[b]);
                }
                for (Index w = 0; w < nw; ++w) {
                    const double c = qp.C(working[w], free_idx[a]);
                    K(a, nf + w) = c;
                    K(nf + w, a) = c;
                }
            }
            const Vector sol = K.partialPivLu().solve(rhs);
            if (!sol.allFinite()) {
                break;
            }
            for (Index a = 0; a < nf; ++a) {
                p[free_idx[a]] = sol[a];
            }
            mu = sol.tail(nw);
        }

        const double p_norm = inf_norm(p);
        if (subspace_minimum || p_norm <= options.step_tolerance * std::max(1.0, inf_norm(z))) {
            subspace_minimum = false;
            // Stationary on the working set: check multiplier signs.
            Vector r = g;
            for (Index w = 0; w < nw; ++w) {
                r += qp.C.row(working[w]).transpose() * mu[w];
            }
            const double tol = options.multiplier_tolerance * std::max(1.0, inf_norm(g));
            double most_negative = -tol;
            Index release_bound = -1;
            Index release_general = -1;
            for (Index j = 0; j < n; ++j) {
                if (status[j] == free_var || qp.lower[j] == qp.upper[j]) {
                    continue;
                }
                const double mult = status[j] == at_lower ? r[j] : -r[j];
                if (mult < most_negative) {
                    most_negative = mult;
                    release_bound = j;
                    release_general = -1;
                }
            }
            for (Index w = 0; w < nw; ++w) {
                if (mu[w] < most_negative) {
                    most_negative = mu[w];
                    release_general = w;
                    release_bound = -1;
                }
            }
            if (release_bound < 0 && release_general < 0) {
                result.optimal = true;
                result.z = z;
                result.bound_multipliers = Vector::Zero(n);
                for (Index j = 0; j < n; ++j) {
                    if (status[j] != free_var) {
                        result.bound_multipliers[j] = -r[j];
                    }
                }
                result.general_multipliers = Vector::Zero(m);
                for (Index w = 0; w < nw; ++w) {
                    result.general_multipliers[working[w]] = std::max(0.0, mu[w]);
                }
                return result;
            }
            if (release_bound >= 0) {
                status[release_bound] = free_var;
            } else {
                in_working[working[release_general]] = 0;
                working.erase(working.begin() + release_general);
            }
            continue;
        }

        // Ratio test against constraints outside the working set.
        double alpha = 1.0;
        Index block_bound = -1;
        Status block_side = free_var;
        Index block_general = -1;
        const double p_small = 1e-14 * p_norm;
        for (Index j : free_idx) {
            if (p[j] < -p_small && std::isfinite(qp.lower[j])) {
                const double a = std::max(0.0, (qp.lower[j] - z[j]) / p[j]);
                if (a < alpha) {
                    alpha = a;
                    block_bound = j;
                    block_side = at_lower;
                    block_general = -1;
                }
            } else if (p[j] > p_small && std::isfinite(qp.upper[j])) {
                const double a = std::max(0.0, (qp.upper[j] - z[j]) / p[j]);
                if (a < alpha) {
                    alpha = a;
                    block_bound = j;
                    block_side = at_upper;
                    block_general = -1;
                }
            }
        }
        if (m > 0) {
            const Vector Cp = qp.C * p;
            const Vector slack = qp.d - qp.C * z;
            const double cp_small = 1e-14 * std::max(1.0, inf_norm(Cp));
            for (Index i = 0; i < m; ++i) {
                if (in_working[i] || Cp[i] <= cp_small) {
                    continue;
                }
                const double a = std::max(0.0, slack[i] / Cp[i]);
                if (a < alpha) {
                    alpha = a;
                    block_general = i;
                    block_bound = -1;
                }
            }
        }

        z += alpha * p;
        z = z.cwiseMax(qp.lower).cwiseMin(qp.upper);
        subspace_minimum = block_bound < 0 && block_general < 0;
        if (block_bound >= 0) {
            status[block_bound] = block_side;
            z[block_bound] = block_side == at_lower ? qp.lower[block_bound] : qp.upper[block_bound];
        } else if (block_general >= 0) {
            in_working[block_general] = 1;
            working.push_back(block_general);
        }
    }

    result.optimal = false;
    result.z = z;
    result.bound_multipliers = Vector::Zero(n);
    result.general_multipliers = Vector::Zero(m);
    return result;
}

}  // namespace etmpc
