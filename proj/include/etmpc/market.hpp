#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>

#include "common.hpp"
#include "random.hpp"

namespace etmpc {

/// Synthetic production/consumption and electricity price processes.
/// Each true series is a piecewise-constant base level plus an Ornstein-Uhlenbeck deviation.
struct MarketConfig {
    double production_level_min = -2.0;  ///< kW
    double production_level_max = 2.0;
    int production_duration_min = 30;  ///< steps
    int production_duration_max = 120;
    double price_level_min = 0.2;  ///< $/kWh
    double price_level_max = 0.8;
    int price_hold_steps = 360;  ///< one hour at 10 s steps
    double ou_reversion = 0.15;
    double production_sigma = 0.3;
    double price_sigma = 0.05;
    double ou_dt = 1.0;
    double price_floor = 0.01;
    /// Forecast error process; its contribution at lead j is scaled by j / N.
    double forecast_reversion = 0.05;
    double forecast_production_sigma = 0.3;
    double forecast_price_sigma = 0.05;
};

/// One Euler-Maruyama step of dX = reversion (mean - X) dt + sigma dW.
[[nodiscard]] inline double ou_step(double value, double reversion, double mean, double sigma, double dt, Rng& rng) {
    require(reversion >= 0.0 && sigma >= 0.0 && dt > 0.0, "ou_step: invalid parameters");
    const double noise = sigma > 0.0 ? sigma * std::sqrt(dt) * rng.normal() : 0.0;
    return value + reversion * (mean - value) * dt + noise;
}

/// Stationary standard deviation of the discretized OU recursion above (mean zero).
[[nodiscard]] inline double ou_stationary_std(double reversion, double sigma, double dt) {
    const double phi = 1.0 - reversion * dt;
    if (std::abs(phi) >= 1.0) {
        return 0.0;
    }
    return sigma * std::sqrt(dt / (1.0 - phi * phi));
}

struct MarketSeries {
    Vector production;  ///< P_k, kW
    Vector price;       ///< lambda_k, $/kWh
    Vector production_base;
    Vector price_base;
    Vector production_deviation;
    Vector price_deviation;

    [[nodiscard]] int size() const { return static_cast<int>(production.size()); }
};

namespace detail {

/// Piecewise-constant levels; the first segment starts at a random phase.
inline Vector sample_segments(int length, double lo, double hi, int dur_min, int dur_max, Rng& rng) {
    Vector out(length);
    int k = 0;
    long remaining = rng.uniform_int(1, rng.uniform_int(dur_min, dur_max));
    while (k < length) {
        const double level = lo == hi ? lo : rng.uniform(lo, hi);
        for (long j = 0; j < remaining && k < length; ++j) {
            out[k++] = level;
        }
        remaining = rng.uniform_int(dur_min, dur_max);
    }
    return out;
}

inline Vector sample_ou_path(int length, double reversion, double sigma, double dt, Rng& rng) {
    Vector out(length);
    const double s0 = ou_stationary_std(reversion, sigma, dt);
    double value = s0 > 0.0 ? rng.normal(0.0, s0) : 0.0;
    for (int k = 0; k < length; ++k) {
        out[k] = value;
        value = ou_step(value, reversion, 0.0, sigma, dt, rng);
    }
    return out;
}

}  // namespace detail

/// True market series covering `steps + horizon` steps.
[[nodiscard]] inline MarketSeries generate_market(int steps, int horizon, const MarketConfig& cfg, Rng& rng) {
    require(steps >= 1 && horizon >= 1, "generate_market: steps and horizon must be positive");
    require(cfg.production_duration_min >= 1 && cfg.production_duration_min <= cfg.production_duration_max,
            "generate_market: invalid production durations");
    require(cfg.price_hold_steps >= 1, "generate_market: invalid price hold");
    const int length = steps + horizon;
    MarketSeries s;
    s.production_base = detail::sample_segments(length, cfg.production_level_min, cfg.production_level_max,
                                                 cfg.production_duration_min, cfg.production_duration_max, rng);
    s.price_base = detail::sample_segments(length, cfg.price_level_min, cfg.price_level_max, cfg.price_hold_steps,
                                           cfg.price_hold_steps, rng);
    s.production_deviation = detail::sample_ou_path(length, cfg.ou_reversion, cfg.production_sigma, cfg.ou_dt, rng);
    s.price_deviation = detail::sample_ou_path(length, cfg.ou_reversion, cfg.price_sigma, cfg.ou_dt, rng);
    s.production = s.production_base + s.production_deviation;
    s.price = (s.price_base + s.price_deviation).cwiseMax(cfg.price_floor);
    return s;
}

struct Forecast {
    int anchor = 0;
    Vector production;  ///< lead 0 .. N-1
    Vector price;
};

/// Forecast issued at `anchor`: the base level is assumed constant, the current
/// deviation decays at the OU reversion rate, and a forecast-error OU process scaled
/// by lead / N is added. Lead 0 reproduces the true value exactly.
[[nodiscard]] inline Forecast generate_forecast(const MarketSeries& series, int anchor, int horizon,
                                                const MarketConfig& cfg, Rng& rng) {
    require(anchor >= 0 && anchor + horizon <= series.size(), "generate_forecast: anchor out of range");
    Forecast f;
    f.anchor = anchor;
    f.production.resize(horizon);
    f.price.resize(horizon);
    const double decay = 1.0 - cfg.ou_reversion * cfg.ou_dt;
    double zp = 0.0;
    double zl = 0.0;
    double carry = 1.0;
    for (int j = 0; j < horizon; ++j) {
        const double scale = static_cast<double>(j) / horizon;
        f.production[j] = series.production_base[anchor] + carry * series.production_deviation[anchor] + scale * zp;
        f.price[j] = std::max(cfg.price_floor,
                              series.price_base[anchor] + carry * series.price_deviation[anchor] + scale * zl);
        carry *= decay;
        zp = ou_step(zp, cfg.forecast_reversion, 0.0, cfg.forecast_production_sigma, cfg.ou_dt, rng);
        zl = ou_step(zl, cfg.forecast_reversion, 0.0, cfg.forecast_price_sigma, cfg.ou_dt, rng);
    }
    return f;
}

inline void write_market_csv(std::ostream& os, const MarketSeries& s) {
    os << "step,P_true,lambda_true,P_base,lambda_base\n";
    for (int k = 0; k < s.size(); ++k) {
        os << k << ',' << s.production[k] << ',' << s.price[k] << ',' << s.production_base[k] << ','
           << s.price_base[k] << '\n';
    }
}

}  // namespace etmpc
