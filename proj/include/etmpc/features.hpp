#pragma once

#include <cmath>

#include "common.hpp"

namespace etmpc {

/// [raw, raw^2]; the bias is appended after normalization.
[[nodiscard]] inline Vector expand_features(const Vector& raw) {
    Vector e(2 * raw.size());
    e << raw, raw.array().square().matrix();
    return e;
}

/// Welford running mean and variance, one entry per component.
class RunningStats {
public:
    RunningStats() = default;
    explicit RunningStats(Index dim) : mean_(Vector::Zero(dim)), m2_(Vector::Zero(dim)) {}

    void push(const Vector& v) {
        if (count_ == 0 && mean_.size() == 0) {
            mean_ = Vector::Zero(v.size());
            m2_ = Vector::Zero(v.size());
        }
        require(v.size() == mean_.size(), "RunningStats: dimension mismatch");
        ++count_;
        const Vector delta = v - mean_;
        mean_ += delta / static_cast<double>(count_);
        m2_ += delta.cwiseProduct(v - mean_);
    }

    void merge(const RunningStats& other) {
        if (other.count_ == 0) {
            return;
        }
        if (count_ == 0) {
            *this = other;
            return;
        }
        require(other.mean_.size() == mean_.size(), "RunningStats: dimension mismatch");
        const double n = static_cast<double>(count_ + other.count_);
        const Vector delta = other.mean_ - mean_;
        mean_ += delta * (static_cast<double>(other.count_) / n);
        m2_ += other.m2_ + delta.cwiseProduct(delta) * (static_cast<double>(count_) * other.count_ / n);
        count_ += other.count_;
    }

    [[nodiscard]] long count() const { return count_; }
    [[nodiscard]] const Vector& mean() const { return mean_; }

    /// Population standard deviation; components below `floor` are replaced by 1 so a
    /// constant feature is only centred.
    [[nodiscard]] Vector stddev(double floor = 1e-8) const {
        Vector s = count_ > 0 ? Vector((m2_ / static_cast<double>(count_)).cwiseSqrt()) : Vector::Ones(mean_.size());
        for (Index i = 0; i < s.size(); ++i) {
            if (!(s[i] >= floor)) {
                s[i] = 1.0;
            }
        }
        return s;
    }

private:
    long count_ = 0;
    Vector mean_;
    Vector m2_;
};

/// [(e - mean) / std, 1] with e = [raw, raw^2].
[[nodiscard]] inline Vector build_features(const Vector& raw, const Vector& mean, const Vector& stddev) {
    const Vector e = expand_features(raw);
    require(mean.size() == e.size() && stddev.size() == e.size(), "build_features: statistics dimension mismatch");
    require((stddev.array() > 0.0).all(), "build_features: standard deviations must be positive");
    Vector f(e.size() + 1);
    f << ((e - mean).array() / stddev.array()).matrix(), 1.0;
    return f;
}

}  // namespace etmpc
