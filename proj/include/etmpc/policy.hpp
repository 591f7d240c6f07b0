#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "config.hpp"
#include "features.hpp"
#include "random.hpp"

namespace etmpc {

inline constexpr int feature_schema_version = 1;

/// Weights of the logistic recomputation policy plus the frozen normalization of its inputs.
struct PolicyParams {
    Vector theta;   ///< length 2 n_raw + 1, bias last
    Vector mean;    ///< length 2 n_raw
    Vector stddev;  ///< length 2 n_raw, strictly positive
    std::string system;
    std::vector<std::string> feature_names;  ///< raw names
    int schema_version = feature_schema_version;

    [[nodiscard]] Index raw_size() const { return mean.size() / 2; }

    void validate() const {
        require(mean.size() % 2 == 0 && mean.size() == stddev.size(), "PolicyParams: statistics size mismatch");
        require(theta.size() == mean.size() + 1, "PolicyParams: theta must have one weight per feature plus bias");
        require(theta.allFinite() && mean.allFinite() && stddev.allFinite(), "PolicyParams: non-finite entries");
        require((stddev.array() > 0.0).all(), "PolicyParams: standard deviations must be positive");
    }
};

/// Zero weights except the bias; identity normalization.
[[nodiscard]] inline PolicyParams initial_policy_params(Index n_raw, double bias) {
    PolicyParams p;
    p.theta = Vector::Zero(2 * n_raw + 1);
    p.theta[2 * n_raw] = bias;
    p.mean = Vector::Zero(2 * n_raw);
    p.stddev = Vector::Ones(2 * n_raw);
    return p;
}

[[nodiscard]] inline double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// pi(0 | s) = sigma(theta' s).
[[nodiscard]] inline double prob_no_recompute(const Vector& theta, const Vector& s) {
    require(theta.size() == s.size(), "prob_no_recompute: theta and features differ in length");
    return sigmoid(theta.dot(s));
}

[[nodiscard]] inline double log_prob(const Vector& theta, const Vector& s, int action) {
    require(action == 0 || action == 1, "log_prob: action must be 0 or 1");
    const double z = theta.dot(s);
    // log sigma(z) = -log(1 + e^-z), written to avoid overflow for either sign.
    const double t = action == 0 ? z : -z;
    return t >= 0.0 ? -std::log1p(std::exp(-t)) : t - std::log1p(std::exp(t));
}

[[nodiscard]] inline Vector log_prob_grad(const Vector& theta, const Vector& s, int action) {
    require(action == 0 || action == 1, "log_prob_grad: action must be 0 or 1");
    const double p0 = prob_no_recompute(theta, s);
    return action == 0 ? Vector(s * (1.0 - p0)) : Vector(-s * p0);
}

enum class PolicyKind { always, never, periodic, logistic };

struct RecomputePolicy {
    PolicyKind kind = PolicyKind::always;
    int period = 1;
    PolicyParams params;

    [[nodiscard]] bool stochastic() const { return kind == PolicyKind::logistic; }

    [[nodiscard]] std::string label() const {
        switch (kind) {
            case PolicyKind::always:
                return "always";
            case PolicyKind::never:
                return "never";
            case PolicyKind::periodic:
                return "periodic:" + std::to_string(period);
            case PolicyKind::logistic:
                break;
        }
        return "logistic";
    }

    static RecomputePolicy always() { return {PolicyKind::always, 1, {}}; }
    static RecomputePolicy never() { return {PolicyKind::never, 1, {}}; }
    static RecomputePolicy periodic(int t) {
        require(t >= 1, "periodic policy needs t >= 1");
        return {PolicyKind::periodic, t, {}};
    }
    static RecomputePolicy logistic(PolicyParams p) {
        p.validate();
        return {PolicyKind::logistic, 1, std::move(p)};
    }
};

/// 1 = recompute. Only the logistic policy consumes randomness or features.
[[nodiscard]] inline int sample_action(const RecomputePolicy& policy, const Vector& features, int step, Rng& rng) {
    switch (policy.kind) {
        case PolicyKind::always:
            return 1;
        case PolicyKind::never:
            return 0;
        case PolicyKind::periodic:
            return step % policy.period == 0 ? 1 : 0;
        case PolicyKind::logistic:
            break;
    }
    return rng.bernoulli(1.0 - prob_no_recompute(policy.params.theta, features)) ? 1 : 0;
}

[[nodiscard]] inline Json to_json(const PolicyParams& p) {
    auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    return {{"schema_version", p.schema_version}, {"system", p.system},       {"features", p.feature_names},
            {"theta", vec(p.theta)},             {"mean", vec(p.mean)},      {"stddev", vec(p.stddev)}};
}

[[nodiscard]] inline PolicyParams policy_params_from_json(const Json& j) {
    auto vec = [&](const char* key) {
        if (!j.contains(key)) {
            throw ConfigError(std::string("policy file lacks '") + key + "'");
        }
        const auto v = j.at(key).get<std::vector<double>>();
        return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())));
    };
    PolicyParams p;
    p.schema_version = j.value("schema_version", 0);
    if (p.schema_version != feature_schema_version) {
        throw ConfigError("policy file has feature schema " + std::to_string(p.schema_version) + ", expected " +
                          std::to_string(feature_schema_version));
    }
    p.system = j.value("system", std::string());
    if (j.contains("features")) {
        p.feature_names = j.at("features").get<std::vector<std::string>>();
    }
    p.theta = vec("theta");
    p.mean = vec("mean");
    p.stddev = vec("stddev");
    try {
        p.validate();
    } catch (const ContractViolation& e) {
        throw ConfigError(std::string("invalid policy file: ") + e.what());
    }
    return p;
}

/// "always", "never", "periodic:t", or a path to a PolicyParams JSON file.
[[nodiscard]] inline RecomputePolicy parse_policy(const std::string& text) {
    if (text == "always") {
        return RecomputePolicy::always();
    }
    if (text == "never") {
        return RecomputePolicy::never();
    }
    if (text.rfind("periodic:", 0) == 0) {
        const std::string num = text.substr(9);
        size_t used = 0;
        int t = 0;
        try {
            t = std::stoi(num, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != num.size() || num.empty() || t < 1) {
            throw ConfigError("bad periodic policy '" + text + "' (expected periodic:t with t >= 1)");
        }
        return RecomputePolicy::periodic(t);
    }
    return RecomputePolicy::logistic(policy_params_from_json(read_json_file(text)));
}

}  // namespace etmpc
