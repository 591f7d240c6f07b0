#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "etmpc/battery.hpp"
#include "etmpc/pendulum.hpp"
#include "etmpc/qp.hpp"
#include "etmpc/random.hpp"
#include "etmpc/sqp.hpp"

using namespace etmpc;

namespace {

// Linear dynamics with quadratic stage x'Qx + u'Ru and terminal x'Qf x.
OcpSpec lti_problem(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R, const Matrix& Qf, int N) {
    OcpSpec spec;
    spec.horizon = N;
    spec.nx = A.rows();
    spec.nu = B.cols();
    spec.dynamics = [A, B](const Vector& x, const Vector& u, const Vector&) -> Vector { return A * x + B * u; };
    spec.jacobian = [A, B](const Vector&, const Vector&, const Vector&, Matrix& Ax, Matrix& Bx) {
        Ax = A;
        Bx = B;
    };
    spec.stage_cost = [Q, R](const Vector& x, const Vector& u, const Vector&) {
        CostModel c;
        c.value = x.dot(Q * x) + u.dot(R * u);
        c.gx = 2.0 * Q * x;
        c.gu = 2.0 * R * u;
        c.hxx = 2.0 * Q;
        c.hxu = Matrix::Zero(x.size(), u.size());
        c.huu = 2.0 * R;
        return c;
    };
    spec.terminal_cost = [Qf](const Vector& x) {
        CostModel c;
        c.value = x.dot(Qf * x);
        c.gx = 2.0 * Qf * x;
        c.hxx = 2.0 * Qf;
        return c;
    };
    spec.input_change_weight = Matrix::Zero(spec.nu, spec.nu);
    spec.u_lower = Vector::Constant(spec.nu, -std::numeric_limits<double>::infinity());
    spec.u_upper = Vector::Constant(spec.nu, std::numeric_limits<double>::infinity());
    spec.forecast.assign(static_cast<size_t>(N), Vector());
    spec.u_previous = Vector::Zero(spec.nu);
    return spec;
}

OcpSpec scalar_two_step() {
    return lti_problem(Matrix::Ones(1, 1), Matrix::Ones(1, 1), Matrix::Ones(1, 1), Matrix::Ones(1, 1),
                       Matrix::Ones(1, 1), 2);
}

struct RiccatiOracle {
    std::vector<Matrix> K;
    Matrix P0;
};

// Finite-horizon backward recursion; u_k = -K_k x_k is optimal and the cost is x0'P0 x0.
RiccatiOracle backward_riccati(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R, const Matrix& Qf,
                               int N) {
    RiccatiOracle o;
    o.K.resize(N);
    Matrix P = Qf;
    for (int k = N - 1; k >= 0; --k) {
        const Matrix S = R + B.transpose() * P * B;
        o.K[k] = S.llt().solve(B.transpose() * P * A);
        P = Q + A.transpose() * P * (A - B * o.K[k]);
        P = 0.5 * (P + P.transpose());
    }
    o.P0 = P;
    return o;
}

Matrix random_matrix(Rng& rng, Index r, Index c, double scale) {
    Matrix M(r, c);
    for (Index i = 0; i < M.size(); ++i) {
        M.data()[i] = rng.normal(0.0, scale);
    }
    return M;
}

Matrix random_spd(Rng& rng, Index n, double floor) {
    const Matrix L = random_matrix(rng, n, n, 1.0);
    return L * L.transpose() + floor * Matrix::Identity(n, n);
}

NlpSolution simulate(const OcpSpec& spec, const Vector& x0, const Trajectory& u) {
    NlpSolution s;
    s.u = u;
    s.x.resize(u.size() + 1);
    s.x[0] = x0;
    for (int k = 0; k < spec.horizon; ++k) {
        s.x[k + 1] = spec.dynamics(s.x[k], u[k], spec.parameter(k));
    }
    return s;
}

}  // namespace

TEST(Qp, BoxConstrainedAgainstEnumeration) {
    // Oracle: enumerate all active-bound patterns of a small strictly convex box QP.
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const Index n = 3;
        QpProblem qp;
        qp.H = random_spd(rng, n, 0.5);
        qp.f = random_matrix(rng, n, 1, 3.0);
        qp.lower = Vector::Constant(n, -1.0);
        qp.upper = Vector::Constant(n, 1.0);
        qp.C.resize(0, n);
        qp.d.resize(0);
        const QpResult r = solve_qp(qp, Vector::Zero(n));
        ASSERT_TRUE(r.optimal);

        double best = std::numeric_limits<double>::infinity();
        Vector best_z;
        for (int pattern = 0; pattern < 27; ++pattern) {
            std::vector<int> s(n);
            int code = pattern;
            for (Index j = 0; j < n; ++j) {
                s[j] = code % 3 - 1;
                code /= 3;
            }
            std::vector<Index> fr;
            Vector z = Vector::Zero(n);
            for (Index j = 0; j < n; ++j) {
                if (s[j] == 0) fr.push_back(j);
                else z[j] = s[j];
            }
            if (!fr.empty()) {
                Matrix Hf(fr.size(), fr.size());
                Vector rhs(fr.size());
                for (size_t a = 0; a < fr.size(); ++a) {
                    rhs[a] = -qp.f[fr[a]];
                    for (Index j = 0; j < n; ++j) {
                        if (s[j] != 0) rhs[a] -= qp.H(fr[a], j) * z[j];
                    }
                    for (size_t b = 0; b < fr.size(); ++b) Hf(a, b) = qp.H(fr[a], fr[b]);
                }
                const Vector zf = Hf.llt().solve(rhs);
                for (size_t a = 0; a < fr.size(); ++a) z[fr[a]] = zf[a];
            }
            if ((z.array() < -1.0 - 1e-12).any() || (z.array() > 1.0 + 1e-12).any()) continue;
            const double v = 0.5 * z.dot(qp.H * z) + qp.f.dot(z);
            if (v < best) {
                best = v;
                best_z = z;
            }
        }
        EXPECT_LT((r.z - best_z).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(Qp, GeneralInequality) {
    // min (z0 - 2)^2 + (z1 - 2)^2 s.t. z0 + z1 <= 1: solution (0.5, 0.5), multiplier 3.
    QpProblem qp;
    qp.H = 2.0 * Matrix::Identity(2, 2);
    qp.f = Vector::Constant(2, -4.0);
    qp.lower = Vector::Constant(2, -10.0);
    qp.upper = Vector::Constant(2, 10.0);
    qp.C = Matrix::Ones(1, 2);
    qp.d = Vector::Constant(1, 1.0);
    const QpResult r = solve_qp(qp, Vector::Zero(2));
    ASSERT_TRUE(r.optimal);
    EXPECT_NEAR(r.z[0], 0.5, 1e-12);
    EXPECT_NEAR(r.z[1], 0.5, 1e-12);
    EXPECT_NEAR(r.general_multipliers[0], 3.0, 1e-10);
}

TEST(Ocp, ScalarTwoStepClosedForm) {
    const OcpSpec spec = scalar_two_step();
    const NlpSolution s = solve_ocp(spec, Vector::Ones(1));
    ASSERT_TRUE(s.converged);
    EXPECT_NEAR(s.u[0][0], -0.6, 1e-8);
    EXPECT_NEAR(s.u[1][0], -0.2, 1e-8);
    EXPECT_NEAR(s.objective, 1.6, 1e-8);
    EXPECT_EQ(s.x[0][0], 1.0);
}

TEST(Ocp, KktResidualOfAnalyticOptimum) {
    const OcpSpec spec = scalar_two_step();
    NlpSolution analytic;
    analytic.x = {Vector::Constant(1, 1.0), Vector::Constant(1, 0.4), Vector::Constant(1, 0.2)};
    analytic.u = {Vector::Constant(1, -0.6), Vector::Constant(1, -0.2)};
    EXPECT_LE(kkt_residual(spec, Vector::Ones(1), analytic), 1e-10);

    NlpSolution zero;
    zero.x.assign(3, Vector::Zero(1));
    zero.u.assign(2, Vector::Zero(1));
    EXPECT_GT(kkt_residual(spec, Vector::Ones(1), zero), 0.0);

    NlpSolution wrong = zero;
    wrong.x.pop_back();
    EXPECT_THROW((void)kkt_residual(spec, Vector::Ones(1), wrong), ContractViolation);
}

TEST(Ocp, MatchesBackwardRiccatiOnRandomLtiProblems) {
    Rng rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
        const Index nx = rng.uniform_int(1, 4);
        const Index nu = rng.uniform_int(1, 2);
        const int N = static_cast<int>(rng.uniform_int(1, 10));
        const Matrix A = random_matrix(rng, nx, nx, 0.6);
        const Matrix B = random_matrix(rng, nx, nu, 1.0);
        const Matrix Q = random_spd(rng, nx, 0.1);
        const Matrix R = random_spd(rng, nu, 0.1);
        const Matrix Qf = random_spd(rng, nx, 0.1);
        const Vector x0 = random_matrix(rng, nx, 1, 1.0);

        const OcpSpec spec = lti_problem(A, B, Q, R, Qf, N);
        const NlpSolution s = solve_ocp(spec, x0);
        ASSERT_TRUE(s.converged) << "trial " << trial;
        const RiccatiOracle o = backward_riccati(A, B, Q, R, Qf, N);
        Vector x = x0;
        for (int k = 0; k < N; ++k) {
            const Vector u = -o.K[k] * x;
            EXPECT_LT((s.u[k] - u).cwiseAbs().maxCoeff(), 1e-6) << "trial " << trial << " k " << k;
            x = A * x + B * u;
        }
        const double J = x0.dot(o.P0 * x0);
        EXPECT_NEAR(s.objective, J, 1e-6 * std::max(1.0, std::abs(J)));
        EXPECT_LE(s.max_gap, 1e-8);
        EXPECT_LE(s.kkt_residual, 1e-6);
    }
}

TEST(Ocp, InputChangePenaltyMatchesAugmentedRiccati) {
    // Delta-u weighting turns the problem into an LQ problem on [x; u_prev] with input du.
    Rng rng(77);
    for (int trial = 0; trial < 5; ++trial) {
        const Index nx = 2;
        const int N = 6;
        const Matrix A = random_matrix(rng, nx, nx, 0.6);
        const Matrix B = random_matrix(rng, nx, 1, 1.0);
        const Matrix Q = random_spd(rng, nx, 0.2);
        const Matrix R = Matrix::Constant(1, 1, 0.3);
        const Matrix D = Matrix::Constant(1, 1, 0.7);
        const Vector x0 = random_matrix(rng, nx, 1, 1.0);
        OcpSpec spec = lti_problem(A, B, Q, R, Q, N);
        spec.input_change_weight = D;
        spec.u_previous = Vector::Constant(1, 0.4);
        const NlpSolution s = solve_ocp(spec, x0);
        ASSERT_TRUE(s.converged);

        Matrix Aa = Matrix::Zero(3, 3);
        Aa.topLeftCorner(2, 2) = A;
        Aa.topRightCorner(2, 1) = B;
        Aa(2, 2) = 1.0;
        Matrix Ba(3, 1);
        Ba << B, 1.0;
        // The objective is an exact quadratic in du; recover it from evaluations and
        // solve the normal equations.
        const Index nz = N;
        Matrix Hs = Matrix::Zero(nz, nz);
        Vector gs = Vector::Zero(nz);
        auto objective = [&](const Vector& du) {
            Vector xa(3);
            xa << x0, spec.u_previous;
            double J = 0.0;
            for (int k = 0; k < N; ++k) {
                const Vector xn = Aa * xa + Ba * du.segment(k, 1);
                const double u = xa[2] + du[k];
                J += xa.head(2).dot(Q * xa.head(2)) + u * R(0, 0) * u + du[k] * D(0, 0) * du[k];
                xa = xn;
            }
            J += xa.head(2).dot(Q * xa.head(2));
            return J;
        };
        const double cs = objective(Vector::Zero(nz));
        for (Index i = 0; i < nz; ++i) {
            const Vector ei = Vector::Unit(nz, i);
            gs[i] = 0.5 * (objective(ei) - objective(-ei));
            for (Index j = 0; j < nz; ++j) {
                const Vector ej = Vector::Unit(nz, j);
                Hs(i, j) = objective(ei + ej) - objective(ei) - objective(ej) + cs;
            }
        }
        const Vector du = Hs.llt().solve(-gs);
        double u = spec.u_previous[0];
        for (int k = 0; k < N; ++k) {
            u += du[k];
            EXPECT_NEAR(s.u[k][0], u, 1e-6);
        }
        EXPECT_NEAR(s.objective, objective(du), 1e-6);
    }
}

TEST(Ocp, PendulumEquilibriumIsOptimal) {
    const OcpSpec spec = pendulum_ocp(PendulumParams{}, PendulumMpcSettings{});
    const NlpSolution s = solve_ocp(spec, Vector::Zero(4));
    ASSERT_TRUE(s.converged);
    for (const Vector& u : s.u) EXPECT_EQ(u[0], 0.0);
    EXPECT_EQ(s.objective, 0.0);
}

TEST(Ocp, PendulumSolvesAreFeasibleAndWithinBounds) {
    const PendulumParams prm;
    const OcpSpec spec = pendulum_ocp(prm, PendulumMpcSettings{});
    Rng rng(8);
    for (int trial = 0; trial < 30; ++trial) {
        const Vector x0 = sample_pendulum_initial_state(PendulumInitialRanges{}, rng);
        const NlpSolution s = solve_ocp(spec, x0);
        EXPECT_TRUE(s.converged);
        EXPECT_LE(s.max_gap, 1e-8);
        EXPECT_LE(s.kkt_residual, 1e-6);
        EXPECT_EQ(s.x[0], x0);
        for (const Vector& u : s.u) {
            EXPECT_LE(std::abs(u[0]), prm.force_limit);
        }
        // Re-simulating the inputs reproduces the predicted trajectory.
        Vector x = x0;
        for (int k = 0; k < spec.horizon; ++k) {
            x = pendulum_plant_step(prm, x, s.u[k], 0.0);
            EXPECT_LT((x - s.x[k + 1]).cwiseAbs().maxCoeff(), 1e-7);
        }
    }
}

TEST(Ocp, ReturnedObjectiveNeverExceedsFeasibleWarmStart) {
    const PendulumParams prm;
    const OcpSpec spec = pendulum_ocp(prm, PendulumMpcSettings{});
    Rng rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        const Vector x0 = sample_pendulum_initial_state(PendulumInitialRanges{}, rng);
        Trajectory u(spec.horizon);
        for (Vector& uk : u) uk = Vector::Constant(1, rng.uniform(-10.0, 10.0));
        NlpSolution warm = simulate(spec, x0, u);
        warm.objective = objective_value(spec, warm.x, warm.u);
        const NlpSolution s = solve_ocp(spec, x0, warm);
        EXPECT_LE(s.objective, warm.objective + 1e-12);
    }
}

TEST(Ocp, WarmStartNeedsNoMoreIterationsThanColdStart) {
    const PendulumParams prm;
    const OcpSpec spec = pendulum_ocp(prm, PendulumMpcSettings{});
    Rng rng(4);
    std::vector<int> cold;
    std::vector<int> warm;
    for (int trial = 0; trial < 50; ++trial) {
        const Vector x0 = sample_pendulum_initial_state(PendulumInitialRanges{}, rng);
        const NlpSolution first = solve_ocp(spec, x0);
        const Vector x1 = pendulum_plant_step(prm, x0, first.u[0], rng);
        const NlpSolution c = solve_ocp(spec, x1);
        const NlpSolution w = solve_ocp(spec, x1, shift_warm_start(spec, first, 1));
        EXPECT_TRUE(c.converged);
        EXPECT_TRUE(w.converged);
        cold.push_back(c.iterations);
        warm.push_back(w.iterations);
    }
    const double cold_mean = std::accumulate(cold.begin(), cold.end(), 0.0) / 50;
    const double warm_mean = std::accumulate(warm.begin(), warm.end(), 0.0) / 50;
    EXPECT_LT(warm_mean, cold_mean);
    std::nth_element(cold.begin(), cold.begin() + 25, cold.end());
    std::nth_element(warm.begin(), warm.begin() + 25, warm.end());
    EXPECT_LE(warm[25], cold[25]) << "warm " << warm[25] << " cold " << cold[25];
}

TEST(Ocp, ShiftWarmStart) {
    const PendulumParams prm;
    const OcpSpec spec = pendulum_ocp(prm, PendulumMpcSettings{});
    Vector x0(4);
    x0 << 0.0, 0.3, 0.2, -0.1;
    const NlpSolution s = solve_ocp(spec, x0);
    const NlpSolution same = shift_warm_start(spec, s, 0);
    EXPECT_EQ(same.x, s.x);
    EXPECT_EQ(same.u, s.u);

    const int N = spec.horizon;
    const NlpSolution full = shift_warm_start(spec, s, N);
    EXPECT_EQ(full.x[0], s.x[N]);
    Vector x = s.x[N];
    for (int k = 0; k < N; ++k) {
        EXPECT_EQ(full.u[k], s.u[N - 1]);
        x = spec.dynamics(x, s.u[N - 1], Vector());
        EXPECT_EQ(full.x[k + 1], x);
    }

    const NlpSolution one = shift_warm_start(spec, s, 1);
    for (int k = 0; k < N - 1; ++k) {
        EXPECT_EQ(one.u[k], s.u[k + 1]);
        EXPECT_EQ(one.x[k], s.x[k + 1]);
    }
    EXPECT_EQ(one.x[N - 1], s.x[N]);
    EXPECT_THROW((void)shift_warm_start(spec, s, N + 1), ContractViolation);
}

TEST(Ocp, AutodiffJacobianMatchesFiniteDifferences) {
    const PendulumParams prm;
    const OcpSpec spec = pendulum_ocp(prm, PendulumMpcSettings{});
    Rng rng(12);
    for (int trial = 0; trial < 100; ++trial) {
        Vector x(4);
        x << rng.uniform(-1, 1), rng.uniform(-2, 2), rng.uniform(-1.2, 1.2), rng.uniform(-3, 3);
        const Vector u = Vector::Constant(1, rng.uniform(-25, 25));
        Matrix Aad, Bad, Afd, Bfd;
        spec.jacobian(x, u, Vector(), Aad, Bad);
        jacobian_central_difference(spec.dynamics, x, u, Vector(), Afd, Bfd);
        EXPECT_LT((Aad - Afd).cwiseAbs().maxCoeff(), 1e-6);
        EXPECT_LT((Bad - Bfd).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(Ocp, FiniteDifferenceFallback) {
    const PendulumParams prm;
    OcpSpec spec = pendulum_ocp(prm, PendulumMpcSettings{});
    Vector x0(4);
    x0 << 0.0, -0.5, 0.4, 0.3;
    const NlpSolution ad = solve_ocp(spec, x0);
    spec.jacobian = nullptr;
    const NlpSolution fd = solve_ocp(spec, x0);
    ASSERT_TRUE(fd.converged);
    EXPECT_NEAR(fd.objective, ad.objective, 1e-7);
}

TEST(Ocp, RejectsBadInput) {
    const OcpSpec spec = scalar_two_step();
    EXPECT_THROW((void)solve_ocp(spec, Vector::Constant(1, std::nan(""))), SolverFailure);
    EXPECT_THROW((void)solve_ocp(spec, Vector::Zero(2)), ContractViolation);
    OcpSpec bad = spec;
    bad.input_change_weight = Matrix::Constant(1, 1, -1.0);
    EXPECT_THROW((void)solve_ocp(bad, Vector::Ones(1)), ContractViolation);
    bad = spec;
    bad.horizon = 0;
    EXPECT_THROW((void)solve_ocp(bad, Vector::Ones(1)), ContractViolation);
}

TEST(Ocp, DiagnosticsAreRecorded) {
    const OcpSpec spec = pendulum_ocp(PendulumParams{}, PendulumMpcSettings{});
    Vector x0(4);
    x0 << 0.0, 0.0, 0.5, 0.0;
    SolveDiagnostics diag;
    const NlpSolution s = solve_ocp(spec, x0, std::nullopt, SqpOptions{}, &diag);
    EXPECT_EQ(static_cast<int>(diag.iterations.size()), s.iterations);
    ASSERT_FALSE(diag.iterations.empty());
    EXPECT_GT(diag.iterations.front().kkt, s.kkt_residual);
}

TEST(Ocp, BatteryArbitrageMatchesDynamicProgramming) {
    // Without production the trade limit moves the SoC by exactly 0.1 per step, so from
    // x0 = 0.5 the linear program has an optimal vertex on the 0.1 grid. Dynamic
    // programming over that grid with trades in {-360, 0, 360} gives the optimum.
    const BatteryParams prm;
    OcpSpec spec = battery_ocp(prm, BatteryMpcSettings{});
    const int N = spec.horizon;
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        Forecast f;
        f.production = Vector::Zero(N);
        f.price.resize(N);
        for (int k = 0; k < N; ++k) f.price[k] = rng.uniform(0.2, 0.8);
        set_battery_forecast(spec, f);
        const NlpSolution s = solve_ocp(spec, Vector::Constant(1, 0.5));
        ASSERT_TRUE(s.converged);

        std::vector<double> value(11);
        for (int level = 0; level <= 10; ++level) value[level] = -prm.mean_price * prm.capacity * level / 10.0;
        for (int k = N - 1; k >= 0; --k) {
            std::vector<double> next(11, std::numeric_limits<double>::infinity());
            for (int level = 0; level <= 10; ++level) {
                for (int trade = -1; trade <= 1; ++trade) {
                    const int to = level - trade;
                    if (to < 0 || to > 10) continue;
                    const double stage = -f.price[k] * trade * prm.trade_limit() * prm.dt_hours;
                    next[level] = std::min(next[level], stage + value[to]);
                }
            }
            value = next;
        }
        EXPECT_NEAR(s.objective, value[5], 1e-6);
        for (int k = 1; k <= N; ++k) {
            EXPECT_GE(s.x[k][0], -1e-8);
            EXPECT_LE(s.x[k][0], 1.0 + 1e-8);
        }
    }
}

TEST(Ocp, BatteryBuysWhenPricesAreLow) {
    const BatteryParams prm;
    OcpSpec spec = battery_ocp(prm, BatteryMpcSettings{});
    Forecast f;
    f.production = Vector::Zero(spec.horizon);
    f.price = Vector::Constant(spec.horizon, 0.3);
    set_battery_forecast(spec, f);
    const NlpSolution s = solve_ocp(spec, Vector::Constant(1, 0.5));
    ASSERT_TRUE(s.converged);
    EXPECT_NEAR(s.x.back()[0], 1.0, 1e-8);
    EXPECT_NEAR(s.objective, -0.3 * -0.5 * prm.capacity - prm.mean_price * prm.capacity * 1.0, 1e-6);
}
