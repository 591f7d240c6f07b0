#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <string>

#include "common.hpp"

namespace etmpc {

/// Linear time-invariant model x+ = A x + B u (or dx/dt = A x + B u when continuous).
struct LtiModel {
    std::string name;
    Matrix A;
    Matrix B;
    bool discrete = true;
    double dt = 0.0;  ///< sample time in seconds, meaningful when discrete

    void validate() const {
        require(A.rows() == A.cols(), name + ": A must be square");
        require(B.rows() == A.rows(), name + ": B row count must match A");
        require(!discrete || dt > 0.0, name + ": discrete model needs dt > 0");
    }
};

enum class Discretization { zoh, euler };

[[nodiscard]] inline double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
[[nodiscard]] inline Matrix expm(const Matrix& M) {
    require(M.rows() == M.cols(), "expm: matrix must be square");
    const Index n = M.rows();
    const double norm = n == 0 ? 0.0 : M.cwiseAbs().rowwise().sum().maxCoeff();
    int squarings = 0;
    if (norm > 0.5) {
        squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
    }
    const Matrix X = M / std::ldexp(1.0, squarings);

    Matrix E = Matrix::Identity(n, n);
    Matrix term = Matrix::Identity(n, n);
    for (int k = 1; k < 40; ++k) {
        term = term * X / static_cast<double>(k);
        E += term;
        if (max_abs(term) <= 1e-17 * std::max(1.0, max_abs(E))) {
            break;
        }
    }
    for (int s = 0; s < squarings; ++s) {
        E = E * E;
    }
    return E;
}

struct DiscreteMatrices {
    Matrix A;
    Matrix B;
};

/// Zero-order-hold discretization via exp([[A, B], [0, 0]] dt).
[[nodiscard]] inline DiscreteMatrices c2d_zoh(const Matrix& Ac, const Matrix& Bc, double dt) {
    require(dt > 0.0, "c2d_zoh: dt must be positive");
    require(Ac.rows() == Ac.cols() && Bc.rows() == Ac.rows(), "c2d_zoh: inconsistent dimensions");
    const Index n = Ac.rows();
    const Index m = Bc.cols();
    Matrix aug = Matrix::Zero(n + m, n + m);
    aug.topLeftCorner(n, n) = Ac * dt;
    aug.topRightCorner(n, m) = Bc * dt;
    const Matrix E = expm(aug);
    return {E.topLeftCorner(n, n), E.topRightCorner(n, m)};
}

[[nodiscard]] inline DiscreteMatrices c2d_euler(const Matrix& Ac, const Matrix& Bc, double dt) {
    require(dt > 0.0, "c2d_euler: dt must be positive");
    return {Matrix::Identity(Ac.rows(), Ac.cols()) + Ac * dt, Bc * dt};
}

[[nodiscard]] inline LtiModel discretize(const LtiModel& continuous, double dt, Discretization method) {
    require(!continuous.discrete, continuous.name + ": model is already discrete");
    const DiscreteMatrices d = method == Discretization::zoh ? c2d_zoh(continuous.A, continuous.B, dt)
                                                             : c2d_euler(continuous.A, continuous.B, dt);
    return {continuous.name, d.A, d.B, true, dt};
}

/// One application of the Riccati map Q + A'PA - A'PB (R + B'PB)^-1 B'PA.
[[nodiscard]] inline Matrix riccati_map(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                                        const Matrix& P) {
    const Matrix BtPA = B.transpose() * P * A;
    const Matrix S = R + B.transpose() * P * B;
    return Q + A.transpose() * P * A - BtPA.transpose() * S.ldlt().solve(BtPA);
}

[[nodiscard]] inline double dare_residual(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                                          const Matrix& P) {
    return max_abs(P - riccati_map(A, B, Q, R, P));
}

struct DareOptions {
    double tolerance = 1e-10;
    int max_iterations = 100000;
};

/// Stabilizing solution of the discrete algebraic Riccati equation.
///
/// Uses the structure-preserving doubling iteration, which converges quadratically
/// to the same fixed point as the plain Riccati recursion (its k-th iterate equals
/// the 2^k-step recursion). Terminates once successive iterates differ by less than
/// `tolerance` in max-abs norm.
[[nodiscard]] inline Matrix solve_dare(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                                       const std::string& model_name = "model", DareOptions options = {}) {
    const Index n = A.rows();
    require(A.cols() == n && B.rows() == n && Q.rows() == n && Q.cols() == n, "solve_dare: dimension mismatch");
    require(R.rows() == B.cols() && R.cols() == B.cols(), "solve_dare: R dimension mismatch");
    Eigen::LLT<Matrix> r_chol(R);
    require(r_chol.info() == Eigen::Success, "solve_dare: R must be positive definite");

    const Matrix I = Matrix::Identity(n, n);
    Matrix Ak = A;
    Matrix G = B * r_chol.solve(B.transpose());
    Matrix H = Q;
    for (int it = 0; it < options.max_iterations; ++it) {
        const Eigen::PartialPivLU<Matrix> W(I + G * H);
        const Matrix WinvA = W.solve(Ak);
        const Matrix WinvG = W.solve(G);
        Matrix H_next = H + Ak.transpose() * H * WinvA;
        Matrix G_next = G + Ak * WinvG * Ak.transpose();
        Ak = Ak * WinvA;
        H_next = 0.5 * (H_next + H_next.transpose());
        G = 0.5 * (G_next + G_next.transpose());
        if (!H_next.allFinite()) {
            break;
        }
        const double change = max_abs(H_next - H);
        H = std::move(H_next);
        if (change < options.tolerance) {
            return H;
        }
    }
    throw SolverFailure("solve_dare: no convergence for model '" + model_name + "'");
}

/// Infinite-horizon LQR gain for u = -K x together with the Riccati solution.
struct LqrGain {
    Matrix K;
    Matrix P;
    Matrix Q;
    Matrix R;
    double spectral_radius = 0.0;  ///< of A - B K
    /// True when some closed-loop eigenvalue lies on the unit circle in a direction
    /// the state weight cannot see (e.g. an unweighted integrator).
    bool has_marginal_modes = false;
};

[[nodiscard]] inline Eigen::VectorXcd closed_loop_eigenvalues(const Matrix& A, const Matrix& B, const Matrix& K) {
    return Eigen::EigenSolver<Matrix>(A - B * K).eigenvalues();
}

/// Computes K = (R + B'PB)^-1 B'PA and checks the closed loop.
///
/// Every closed-loop eigenvalue must lie strictly inside the unit circle, except for
/// modes on the unit circle that are invisible to Q and untouched by K; such modes are
/// reported through `has_marginal_modes`. Anything else throws SolverFailure.
[[nodiscard]] inline LqrGain lqr_gain(const LtiModel& model, const Matrix& Q, const Matrix& R) {
    model.validate();
    require(model.discrete, model.name + ": lqr_gain expects a discrete model");
    const Matrix& A = model.A;
    const Matrix& B = model.B;
    LqrGain g;
    g.Q = Q;
    g.R = R;
    g.P = solve_dare(A, B, Q, R, model.name);
    g.K = (R + B.transpose() * g.P * B).ldlt().solve(B.transpose() * g.P * A);

    Eigen::EigenSolver<Matrix> es(A - B * g.K);
    const Eigen::VectorXcd lambda = es.eigenvalues();
    const Eigen::MatrixXcd vectors = es.eigenvectors();
    constexpr double unit_tol = 1e-9;
    for (Index i = 0; i < lambda.size(); ++i) {
        const double mag = std::abs(lambda[i]);
        g.spectral_radius = std::max(g.spectral_radius, mag);
        if (mag < 1.0 - unit_tol) {
            continue;
        }
        const Eigen::VectorXcd v = vectors.col(i);
        const double q_leak = (Q.cast<std::complex<double>>() * v).norm();
        const double k_leak = (g.K.cast<std::complex<double>>() * v).norm();
        const double scale = std::max(1.0, max_abs(Q)) * v.norm();
        if (mag > 1.0 + unit_tol || q_leak > 1e-9 * scale || k_leak > 1e-9 * std::max(1.0, v.norm())) {
            throw SolverFailure("lqr_gain: closed loop not stabilized for model '" + model.name +
                                "' (|lambda| = " + std::to_string(mag) + ")");
        }
        g.has_marginal_modes = true;
    }
    return g;
}

/// Compensating input -K * deviation.
[[nodiscard]] inline Vector compensate(const LqrGain& gain, const Vector& deviation) {
    require(deviation.size() == gain.K.cols(), "compensate: dimension mismatch");
    return -gain.K * deviation;
}

}  // namespace etmpc
