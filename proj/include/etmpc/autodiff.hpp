#pragma once

#include <Eigen/Core>
#include <unsupported/Eigen/AutoDiff>

#include <algorithm>
#include <cmath>

#include "common.hpp"

namespace etmpc {

/// Derivative storage is bounded so forward-mode sweeps never touch the heap.
inline constexpr int max_ad_directions = 16;

using AdDerivatives = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, max_ad_directions, 1>;
using AdScalar = Eigen::AutoDiffScalar<AdDerivatives>;

template <typename T>
using VectorT = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Jacobians of a discrete map x+ = f(x, u, p) by forward-mode automatic differentiation.
///
/// `f` must be callable with VectorT<double> and VectorT<AdScalar> arguments.
template <typename Map>
void jacobian_autodiff(const Map& f, const Vector& x, const Vector& u, const Vector& p, Matrix& A, Matrix& B) {
    const Index nx = x.size();
    const Index nu = u.size();
    const Index directions = nx + nu;
    require(directions <= max_ad_directions, "jacobian_autodiff: too many differentiation directions");

    VectorT<AdScalar> xa(nx);
    VectorT<AdScalar> ua(nu);
    for (Index i = 0; i < nx; ++i) {
        xa[i] = AdScalar(x[i], AdDerivatives::Unit(directions, i));
    }
    for (Index i = 0; i < nu; ++i) {
        ua[i] = AdScalar(u[i], AdDerivatives::Unit(directions, nx + i));
    }
    const VectorT<AdScalar> y = f(xa, ua, p);

    A.resize(y.size(), nx);
    B.resize(y.size(), nu);
    for (Index r = 0; r < y.size(); ++r) {
        const AdDerivatives& d = y[r].derivatives();
        // Outputs independent of every input carry an empty derivative vector.
        for (Index c = 0; c < nx; ++c) {
            A(r, c) = d.size() == directions ? d[c] : 0.0;
        }
        for (Index c = 0; c < nu; ++c) {
            B(r, c) = d.size() == directions ? d[nx + c] : 0.0;
        }
    }
}

/// Central finite-difference Jacobians; step is scaled by max(1, |v_i|).
template <typename Map>
void jacobian_central_difference(const Map& f, const Vector& x, const Vector& u, const Vector& p, Matrix& A,
                                 Matrix& B, double step = 1e-6) {
    const Vector y0 = f(x, u, p);
    A.resize(y0.size(), x.size());
    B.resize(y0.size(), u.size());
    Vector xp = x;
    for (Index c = 0; c < x.size(); ++c) {
        const double h = step * std::max(1.0, std::abs(x[c]));
        xp[c] = x[c] + h;
        const Vector plus = f(xp, u, p);
        xp[c] = x[c] - h;
        const Vector minus = f(xp, u, p);
        xp[c] = x[c];
        A.col(c) = (plus - minus) / (2.0 * h);
    }
    Vector up = u;
    for (Index c = 0; c < u.size(); ++c) {
        const double h = step * std::max(1.0, std::abs(u[c]));
        up[c] = u[c] + h;
        const Vector plus = f(x, up, p);
        up[c] = u[c] - h;
        const Vector minus = f(x, up, p);
        up[c] = u[c];
        B.col(c) = (plus - minus) / (2.0 * h);
    }
}

}  // namespace etmpc
