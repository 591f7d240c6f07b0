#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace etmpc {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Trajectory = std::vector<Vector>;

/// Thrown when a documented precondition of an operation does not hold.
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Thrown when a numerical routine cannot produce a usable result.
class SolverFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Thrown for malformed or mismatched configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) {
        throw ContractViolation(message);
    }
}

template <typename Derived>
[[nodiscard]] bool all_finite(const Eigen::MatrixBase<Derived>& m) {
    return m.allFinite();
}

[[nodiscard]] inline double inf_norm(const Vector& v) {
    return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

/// Elementwise min(max(u, lo), hi).
[[nodiscard]] inline Vector clamp_input(const Vector& u, const Vector& lo, const Vector& hi) {
    require(u.size() == lo.size() && u.size() == hi.size(), "clamp_input: dimension mismatch");
    require((lo.array() <= hi.array()).all(), "clamp_input: lower bound exceeds upper bound");
    return u.cwiseMax(lo).cwiseMin(hi);
}

}  // namespace etmpc
