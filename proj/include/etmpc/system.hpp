#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "battery.hpp"
#include "config.hpp"
#include "lqr.hpp"
#include "market.hpp"
#include "pendulum.hpp"
#include "plan.hpp"
#include "random.hpp"

namespace etmpc {

/// Per-episode randomness and bookkeeping. Everything random is drawn from the
/// episode seed, so the same seed replays the same disturbances for any policy.
class EpisodeEnvironment {
public:
    virtual ~EpisodeEnvironment() = default;

    [[nodiscard]] virtual Vector initial_state() const = 0;
    /// The OCP for a plan anchored at `step`. Callers may set `u_previous`.
    virtual OcpSpec& problem_at(int step) = 0;
    [[nodiscard]] virtual Vector plant_step(int step, const Vector& x, const Vector& u, int action) = 0;
    [[nodiscard]] virtual double step_cost(int step, const Vector& x, const Vector& u, int action) const = 0;
    [[nodiscard]] virtual double terminal_cost(const Vector& x) const = 0;
    /// Measured time-varying parameters at `step`.
    [[nodiscard]] virtual Vector observed_parameters(int step) const = 0;
};

class SystemModel {
public:
    virtual ~SystemModel() = default;

    [[nodiscard]] virtual SystemKind kind() const = 0;
    [[nodiscard]] std::string name() const { return to_string(kind()); }
    [[nodiscard]] virtual int horizon() const = 0;
    [[nodiscard]] virtual Index nx() const = 0;
    [[nodiscard]] virtual Vector u_lower() const = 0;
    [[nodiscard]] virtual Vector u_upper() const = 0;
    [[nodiscard]] virtual const LqrGain& lqr() const = 0;
    [[nodiscard]] virtual const SqpOptions& sqp() const = 0;
    [[nodiscard]] virtual std::unique_ptr<EpisodeEnvironment> environment(std::uint64_t seed, int steps) const = 0;
    [[nodiscard]] virtual Vector raw_features(const AugmentedState& s, const Vector& eps) const = 0;
    [[nodiscard]] virtual std::vector<std::string> raw_feature_names() const = 0;
};

class PendulumEnvironment final : public EpisodeEnvironment {
public:
    PendulumEnvironment(const RunConfig& cfg, const OcpSpec& spec, std::uint64_t seed, int steps)
        : prm_(cfg.pendulum), compute_cost_(cfg.pendulum_compute_cost), spec_(spec) {
        Rng init(derive_seed(seed, "initial"));
        x0_ = sample_pendulum_initial_state(cfg.pendulum_initial, init);
        Rng noise(derive_seed(seed, "noise"));
        disturbance_.resize(steps);
        for (int k = 0; k < steps; ++k) {
            disturbance_[k] = prm_.noise_std > 0.0 ? noise.normal(0.0, prm_.noise_std) : 0.0;
        }
    }

    [[nodiscard]] Vector initial_state() const override { return x0_; }
    OcpSpec& problem_at(int) override { return spec_; }

    [[nodiscard]] Vector plant_step(int step, const Vector& x, const Vector& u, int) override {
        require(step >= 0 && step < disturbance_.size(), "pendulum plant_step: step out of range");
        return pendulum_plant_step(prm_, x, u, disturbance_[step]);
    }

    [[nodiscard]] double step_cost(int, const Vector& x, const Vector&, int action) const override {
        return pendulum_step_cost(x, action, compute_cost_);
    }
    [[nodiscard]] double terminal_cost(const Vector& x) const override { return pendulum_terminal_cost(x); }
    [[nodiscard]] Vector observed_parameters(int) const override { return {}; }

    [[nodiscard]] const Vector& disturbances() const { return disturbance_; }

private:
    PendulumParams prm_;
    double compute_cost_;
    OcpSpec spec_;
    Vector x0_;
    Vector disturbance_;
};

class BatteryEnvironment final : public EpisodeEnvironment {
public:
    BatteryEnvironment(const RunConfig& cfg, const OcpSpec& spec, std::uint64_t seed, int steps)
        : prm_(cfg.battery), market_cfg_(cfg.market), spec_(spec), forecast_seed_(derive_seed(seed, "forecast")) {
        Rng init(derive_seed(seed, "initial"));
        x0_ = Vector::Constant(1, init.uniform(prm_.initial_soc_min, prm_.initial_soc_max));
        Rng market(derive_seed(seed, "market"));
        series_ = generate_market(steps, spec_.horizon, market_cfg_, market);
    }

    [[nodiscard]] Vector initial_state() const override { return x0_; }

    OcpSpec& problem_at(int step) override {
        set_battery_forecast(spec_, forecast(step));
        return spec_;
    }

    [[nodiscard]] Vector plant_step(int step, const Vector& x, const Vector& u, int action) override {
        require(step >= 0 && step < series_.size(), "battery plant_step: step out of range");
        return Vector::Constant(1, battery_plant_step(prm_, x[0], u[0], series_.production[step], action));
    }

    [[nodiscard]] double step_cost(int step, const Vector&, const Vector& u, int) const override {
        return battery_step_cost(prm_, u[0], series_.price[step]);
    }
    [[nodiscard]] double terminal_cost(const Vector& x) const override { return battery_terminal_cost(prm_, x[0]); }

    [[nodiscard]] Vector observed_parameters(int step) const override {
        Vector p(2);
        p << series_.price[step], series_.production[step];
        return p;
    }

    /// Forecast issued at `anchor`; its noise depends only on the anchor, not on the policy.
    [[nodiscard]] Forecast forecast(int anchor) const {
        Rng rng(derive_seed(forecast_seed_, static_cast<std::uint64_t>(anchor)));
        return generate_forecast(series_, anchor, spec_.horizon, market_cfg_, rng);
    }

    [[nodiscard]] const MarketSeries& market() const { return series_; }

private:
    BatteryParams prm_;
    MarketConfig market_cfg_;
    OcpSpec spec_;
    std::uint64_t forecast_seed_;
    Vector x0_;
    MarketSeries series_;
};

class PendulumSystem final : public SystemModel {
public:
    explicit PendulumSystem(const RunConfig& cfg)
        : cfg_(cfg),
          spec_(pendulum_ocp(cfg.pendulum, cfg.pendulum_mpc)),
          gain_(lqr_gain(discretize(pendulum_error_model(cfg.pendulum), cfg.pendulum.dt, cfg.lqr_discretization),
                         cfg.pendulum_q, cfg.pendulum_r)) {}

    [[nodiscard]] SystemKind kind() const override { return SystemKind::pendulum; }
    [[nodiscard]] int horizon() const override { return spec_.horizon; }
    [[nodiscard]] Index nx() const override { return pendulum_nx; }
    [[nodiscard]] Vector u_lower() const override { return spec_.u_lower; }
    [[nodiscard]] Vector u_upper() const override { return spec_.u_upper; }
    [[nodiscard]] const LqrGain& lqr() const override { return gain_; }
    [[nodiscard]] const SqpOptions& sqp() const override { return cfg_.sqp; }

    [[nodiscard]] std::unique_ptr<EpisodeEnvironment> environment(std::uint64_t seed, int steps) const override {
        return std::make_unique<PendulumEnvironment>(cfg_, spec_, seed, steps);
    }

    /// [x (4), eps (4), steps_since / N]
    [[nodiscard]] Vector raw_features(const AugmentedState& s, const Vector& eps) const override {
        Vector r(9);
        r << s.x_current, eps, static_cast<double>(s.steps_since) / horizon();
        return r;
    }

    [[nodiscard]] std::vector<std::string> raw_feature_names() const override {
        return {"eta", "v", "beta", "omega", "eps_eta", "eps_v", "eps_beta", "eps_omega", "steps_since"};
    }

private:
    RunConfig cfg_;
    OcpSpec spec_;
    LqrGain gain_;
};

class BatterySystem final : public SystemModel {
public:
    explicit BatterySystem(const RunConfig& cfg)
        : cfg_(cfg),
          spec_(battery_ocp(cfg.battery, cfg.battery_mpc)),
          gain_(lqr_gain(battery_error_model(cfg.battery), cfg.battery_q, cfg.battery_r)) {}

    [[nodiscard]] SystemKind kind() const override { return SystemKind::battery; }
    [[nodiscard]] int horizon() const override { return spec_.horizon; }
    [[nodiscard]] Index nx() const override { return battery_nx; }
    [[nodiscard]] Vector u_lower() const override { return spec_.u_lower; }
    [[nodiscard]] Vector u_upper() const override { return spec_.u_upper; }
    [[nodiscard]] const LqrGain& lqr() const override { return gain_; }
    [[nodiscard]] const SqpOptions& sqp() const override { return cfg_.sqp; }

    [[nodiscard]] std::unique_ptr<EpisodeEnvironment> environment(std::uint64_t seed, int steps) const override {
        return std::make_unique<BatteryEnvironment>(cfg_, spec_, seed, steps);
    }

    [[nodiscard]] std::unique_ptr<BatteryEnvironment> battery_environment(std::uint64_t seed, int steps) const {
        return std::make_unique<BatteryEnvironment>(cfg_, spec_, seed, steps);
    }

    /// [x, eps, steps_since / N, relative price deviation, production]
    [[nodiscard]] Vector raw_features(const AugmentedState& s, const Vector& eps) const override {
        require(s.params_current.size() == 2, "battery features need [price, production]");
        const double mean = cfg_.battery.mean_price;
        Vector r(5);
        r << s.x_current[0], eps[0], static_cast<double>(s.steps_since) / horizon(),
            (s.params_current[0] - mean) / mean, s.params_current[1];
        return r;
    }

    [[nodiscard]] std::vector<std::string> raw_feature_names() const override {
        return {"soc", "eps_soc", "steps_since", "price_dev", "production"};
    }

private:
    RunConfig cfg_;
    OcpSpec spec_;
    LqrGain gain_;
};

[[nodiscard]] inline std::unique_ptr<SystemModel> make_system(const RunConfig& cfg) {
    validate(cfg);
    if (cfg.system == SystemKind::pendulum) {
        return std::make_unique<PendulumSystem>(cfg);
    }
    return std::make_unique<BatterySystem>(cfg);
}

}  // namespace etmpc
