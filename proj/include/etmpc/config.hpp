#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>

#include "battery.hpp"
#include "lqr.hpp"
#include "market.hpp"
#include "pendulum.hpp"
#include "random.hpp"
#include "sqp.hpp"

namespace etmpc {

using Json = nlohmann::json;

enum class SystemKind { pendulum, battery };

[[nodiscard]] inline std::string to_string(SystemKind s) { return s == SystemKind::pendulum ? "pendulum" : "battery"; }

[[nodiscard]] inline SystemKind parse_system(const std::string& name) {
    if (name == "pendulum") {
        return SystemKind::pendulum;
    }
    if (name == "battery") {
        return SystemKind::battery;
    }
    throw ConfigError("unknown system '" + name + "' (expected pendulum or battery)");
}

struct TrainConfig {
    double gamma = 0.975;
    double learning_rate = 0.05;
    int batch_size = 10;
    int episodes = 1500;
    int eval_interval = 150;
    int warmup_episodes = 50;
    double gradient_clip = 10.0;  ///< L2 norm; <= 0 disables clipping
    double initial_bias = -4.0;
    int eval_repeats = 5;   ///< final evaluation
    int curve_repeats = 1;  ///< learning-curve evaluations
    bool use_baseline = true;
    int env_group = 10;  ///< consecutive training episodes sharing one environment draw
    std::uint64_t seed = 1;
};

/// Everything a run needs. Defaults reproduce the benchmark setup.
struct RunConfig {
    SystemKind system = SystemKind::pendulum;
    int episode_steps = 100;
    int testset_size = 100;
    std::uint64_t master_seed = 2024;

    PendulumParams pendulum;
    PendulumInitialRanges pendulum_initial;
    PendulumMpcSettings pendulum_mpc;
    double pendulum_compute_cost = 5e-5;
    Matrix pendulum_q = Vector((Vector(4) << 0.0, 1.0, 10.0, 10.0).finished()).asDiagonal();
    Matrix pendulum_r = Matrix::Constant(1, 1, 0.1);

    BatteryParams battery;
    BatteryMpcSettings battery_mpc;
    MarketConfig market;
    Matrix battery_q = Matrix::Constant(1, 1, 1.0);
    Matrix battery_r = Matrix::Constant(1, 1, 0.1);

    Discretization lqr_discretization = Discretization::zoh;
    SqpOptions sqp;
    TrainConfig train;
    std::string output_dir = "out";
};

namespace detail {

inline Json matrix_to_json(const Matrix& m) {
    Json rows = Json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Index j = 0; j < m.cols(); ++j) {
            row.push_back(m(i, j));
        }
        rows.push_back(row);
    }
    return rows;
}

inline Matrix matrix_from_json(const Json& j, const std::string& key) {
    if (!j.is_array() || j.empty() || !j.front().is_array()) {
        throw ConfigError(key + ": expected a non-empty array of rows");
    }
    const auto rows = static_cast<Index>(j.size());
    const auto cols = static_cast<Index>(j.front().size());
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        const Json& row = j.at(static_cast<size_t>(i));
        if (static_cast<Index>(row.size()) != cols) {
            throw ConfigError(key + ": ragged matrix");
        }
        for (Index k = 0; k < cols; ++k) {
            m(i, k) = row.at(static_cast<size_t>(k)).get<double>();
        }
    }
    return m;
}

/// Reads `obj[key]` into `out` if present.
template <typename T>
void read(const Json& obj, const char* key, T& out) {
    if (obj.contains(key)) {
        try {
            out = obj.at(key).get<T>();
        } catch (const Json::exception& e) {
            throw ConfigError(std::string("config key '") + key + "': " + e.what());
        }
    }
}

inline void read_matrix(const Json& obj, const char* key, Matrix& out) {
    if (obj.contains(key)) {
        out = matrix_from_json(obj.at(key), key);
    }
}

inline void check_keys(const Json& obj, const std::string& section, std::initializer_list<const char*> known) {
    if (!obj.is_object()) {
        throw ConfigError("config section '" + section + "' must be an object");
    }
    for (const auto& item : obj.items()) {
        bool found = false;
        for (const char* k : known) {
            found = found || item.key() == k;
        }
        if (!found) {
            throw ConfigError("unknown config key '" + section + "." + item.key() + "'");
        }
    }
}

inline std::string scheme_name(IntegrationScheme s) { return s == IntegrationScheme::rk4 ? "rk4" : "euler"; }

inline IntegrationScheme parse_scheme(const std::string& s) {
    if (s == "rk4") {
        return IntegrationScheme::rk4;
    }
    if (s == "euler") {
        return IntegrationScheme::euler;
    }
    throw ConfigError("unknown integration scheme '" + s + "'");
}

inline std::string discretization_name(Discretization d) { return d == Discretization::zoh ? "zoh" : "euler"; }

inline Discretization parse_discretization(const std::string& s) {
    if (s == "zoh") {
        return Discretization::zoh;
    }
    if (s == "euler") {
        return Discretization::euler;
    }
    throw ConfigError("unknown discretization '" + s + "'");
}

}  // namespace detail

[[nodiscard]] inline Json to_json(const RunConfig& c) {
    using detail::matrix_to_json;
    Json j;
    j["system"] = to_string(c.system);
    j["episode_steps"] = c.episode_steps;
    j["testset_size"] = c.testset_size;
    j["master_seed"] = c.master_seed;
    j["output_dir"] = c.output_dir;
    j["pendulum"] = {
        {"pole_mass", c.pendulum.pole_mass},
        {"total_mass", c.pendulum.total_mass},
        {"pole_length", c.pendulum.pole_length},
        {"gravity", c.pendulum.gravity},
        {"dt", c.pendulum.dt},
        {"force_limit", c.pendulum.force_limit},
        {"noise_std", c.pendulum.noise_std},
        {"integrator", detail::scheme_name(c.pendulum.scheme)},
        {"initial_velocity", c.pendulum_initial.velocity},
        {"initial_angle", c.pendulum_initial.angle},
        {"initial_angular_velocity", c.pendulum_initial.angular_velocity},
        {"horizon", c.pendulum_mpc.horizon},
        {"input_change_weight", c.pendulum_mpc.input_change_weight},
        {"compute_cost", c.pendulum_compute_cost},
        {"lqr_q", matrix_to_json(c.pendulum_q)},
        {"lqr_r", matrix_to_json(c.pendulum_r)},
    };
    j["battery"] = {
        {"capacity", c.battery.capacity},
        {"dt_hours", c.battery.dt_hours},
        {"compute_power", c.battery.compute_power},
        {"trade_fraction", c.battery.trade_fraction},
        {"mean_price", c.battery.mean_price},
        {"initial_soc_min", c.battery.initial_soc_min},
        {"initial_soc_max", c.battery.initial_soc_max},
        {"horizon", c.battery_mpc.horizon},
        {"input_change_weight", c.battery_mpc.input_change_weight},
        {"soft_penalty", c.battery_mpc.soft_penalty},
        {"lqr_q", matrix_to_json(c.battery_q)},
        {"lqr_r", matrix_to_json(c.battery_r)},
    };
    j["market"] = {
        {"production_level_min", c.market.production_level_min},
        {"production_level_max", c.market.production_level_max},
        {"production_duration_min", c.market.production_duration_min},
        {"production_duration_max", c.market.production_duration_max},
        {"price_level_min", c.market.price_level_min},
        {"price_level_max", c.market.price_level_max},
        {"price_hold_steps", c.market.price_hold_steps},
        {"ou_reversion", c.market.ou_reversion},
        {"production_sigma", c.market.production_sigma},
        {"price_sigma", c.market.price_sigma},
        {"ou_dt", c.market.ou_dt},
        {"price_floor", c.market.price_floor},
        {"forecast_reversion", c.market.forecast_reversion},
        {"forecast_production_sigma", c.market.forecast_production_sigma},
        {"forecast_price_sigma", c.market.forecast_price_sigma},
    };
    j["lqr"] = {{"discretization", detail::discretization_name(c.lqr_discretization)}};
    j["sqp"] = {
        {"max_iterations", c.sqp.max_iterations}, {"kkt_tolerance", c.sqp.kkt_tolerance},
        {"gap_tolerance", c.sqp.gap_tolerance},   {"max_backtracks", c.sqp.max_backtracks},
        {"backtrack_factor", c.sqp.backtrack_factor}, {"armijo", c.sqp.armijo},
        {"regularization", c.sqp.regularization},
    };
    j["train"] = {
        {"gamma", c.train.gamma},
        {"learning_rate", c.train.learning_rate},
        {"batch_size", c.train.batch_size},
        {"episodes", c.train.episodes},
        {"eval_interval", c.train.eval_interval},
        {"warmup_episodes", c.train.warmup_episodes},
        {"gradient_clip", c.train.gradient_clip},
        {"initial_bias", c.train.initial_bias},
        {"eval_repeats", c.train.eval_repeats},
        {"curve_repeats", c.train.curve_repeats},
        {"use_baseline", c.train.use_baseline},
        {"env_group", c.train.env_group},
        {"seed", c.train.seed},
    };
    return j;
}

/// Overlays the keys present in `j` onto `base`. Unknown keys are rejected.
[[nodiscard]] inline RunConfig config_from_json(const Json& j, RunConfig c = {}) {
    using detail::read;
    using detail::read_matrix;
    detail::check_keys(j, "config",
                       {"system", "episode_steps", "testset_size", "master_seed", "output_dir", "pendulum", "battery",
                        "market", "lqr", "sqp", "train"});
    if (j.contains("system")) {
        c.system = parse_system(j.at("system").get<std::string>());
    }
    read(j, "episode_steps", c.episode_steps);
    read(j, "testset_size", c.testset_size);
    read(j, "master_seed", c.master_seed);
    read(j, "output_dir", c.output_dir);
    if (j.contains("pendulum")) {
        const Json& p = j.at("pendulum");
        detail::check_keys(p, "pendulum",
                           {"pole_mass", "total_mass", "pole_length", "gravity", "dt", "force_limit", "noise_std",
                            "integrator", "initial_velocity", "initial_angle", "initial_angular_velocity", "horizon",
                            "input_change_weight", "compute_cost", "lqr_q", "lqr_r"});
        read(p, "pole_mass", c.pendulum.pole_mass);
        read(p, "total_mass", c.pendulum.total_mass);
        read(p, "pole_length", c.pendulum.pole_length);
        read(p, "gravity", c.pendulum.gravity);
        read(p, "dt", c.pendulum.dt);
        read(p, "force_limit", c.pendulum.force_limit);
        read(p, "noise_std", c.pendulum.noise_std);
        if (p.contains("integrator")) {
            c.pendulum.scheme = detail::parse_scheme(p.at("integrator").get<std::string>());
        }
        read(p, "initial_velocity", c.pendulum_initial.velocity);
        read(p, "initial_angle", c.pendulum_initial.angle);
        read(p, "initial_angular_velocity", c.pendulum_initial.angular_velocity);
        read(p, "horizon", c.pendulum_mpc.horizon);
        read(p, "input_change_weight", c.pendulum_mpc.input_change_weight);
        read(p, "compute_cost", c.pendulum_compute_cost);
        read_matrix(p, "lqr_q", c.pendulum_q);
        read_matrix(p, "lqr_r", c.pendulum_r);
    }
    if (j.contains("battery")) {
        const Json& b = j.at("battery");
        detail::check_keys(b, "battery",
                           {"capacity", "dt_hours", "compute_power", "trade_fraction", "mean_price", "initial_soc_min",
                            "initial_soc_max", "horizon", "input_change_weight", "soft_penalty", "lqr_q", "lqr_r"});
        read(b, "capacity", c.battery.capacity);
        read(b, "dt_hours", c.battery.dt_hours);
        read(b, "compute_power", c.battery.compute_power);
        read(b, "trade_fraction", c.battery.trade_fraction);
        read(b, "mean_price", c.battery.mean_price);
        read(b, "initial_soc_min", c.battery.initial_soc_min);
        read(b, "initial_soc_max", c.battery.initial_soc_max);
        read(b, "horizon", c.battery_mpc.horizon);
        read(b, "input_change_weight", c.battery_mpc.input_change_weight);
        read(b, "soft_penalty", c.battery_mpc.soft_penalty);
        read_matrix(b, "lqr_q", c.battery_q);
        read_matrix(b, "lqr_r", c.battery_r);
    }
    if (j.contains("market")) {
        const Json& m = j.at("market");
        detail::check_keys(m, "market",
                           {"production_level_min", "production_level_max", "production_duration_min",
                            "production_duration_max", "price_level_min", "price_level_max", "price_hold_steps",
                            "ou_reversion", "production_sigma", "price_sigma", "ou_dt", "price_floor",
                            "forecast_reversion", "forecast_production_sigma", "forecast_price_sigma"});
        read(m, "production_level_min", c.market.production_level_min);
        read(m, "production_level_max", c.market.production_level_max);
        read(m, "production_duration_min", c.market.production_duration_min);
        read(m, "production_duration_max", c.market.production_duration_max);
        read(m, "price_level_min", c.market.price_level_min);
        read(m, "price_level_max", c.market.price_level_max);
        read(m, "price_hold_steps", c.market.price_hold_steps);
        read(m, "ou_reversion", c.market.ou_reversion);
        read(m, "production_sigma", c.market.production_sigma);
        read(m, "price_sigma", c.market.price_sigma);
        read(m, "ou_dt", c.market.ou_dt);
        read(m, "price_floor", c.market.price_floor);
        read(m, "forecast_reversion", c.market.forecast_reversion);
        read(m, "forecast_production_sigma", c.market.forecast_production_sigma);
        read(m, "forecast_price_sigma", c.market.forecast_price_sigma);
    }
    if (j.contains("lqr")) {
        const Json& l = j.at("lqr");
        detail::check_keys(l, "lqr", {"discretization"});
        if (l.contains("discretization")) {
            c.lqr_discretization = detail::parse_discretization(l.at("discretization").get<std::string>());
        }
    }
    if (j.contains("sqp")) {
        const Json& s = j.at("sqp");
        detail::check_keys(s, "sqp",
                           {"max_iterations", "kkt_tolerance", "gap_tolerance", "max_backtracks", "backtrack_factor",
                            "armijo", "regularization"});
        read(s, "max_iterations", c.sqp.max_iterations);
        read(s, "kkt_tolerance", c.sqp.kkt_tolerance);
        read(s, "gap_tolerance", c.sqp.gap_tolerance);
        read(s, "max_backtracks", c.sqp.max_backtracks);
        read(s, "backtrack_factor", c.sqp.backtrack_factor);
        read(s, "armijo", c.sqp.armijo);
        read(s, "regularization", c.sqp.regularization);
    }
    if (j.contains("train")) {
        const Json& t = j.at("train");
        detail::check_keys(t, "train",
                           {"gamma", "learning_rate", "batch_size", "episodes", "eval_interval", "warmup_episodes",
                            "gradient_clip", "initial_bias", "eval_repeats", "curve_repeats", "use_baseline", "env_group", "seed"});
        read(t, "gamma", c.train.gamma);
        read(t, "learning_rate", c.train.learning_rate);
        read(t, "batch_size", c.train.batch_size);
        read(t, "episodes", c.train.episodes);
        read(t, "eval_interval", c.train.eval_interval);
        read(t, "warmup_episodes", c.train.warmup_episodes);
        read(t, "gradient_clip", c.train.gradient_clip);
        read(t, "initial_bias", c.train.initial_bias);
        read(t, "eval_repeats", c.train.eval_repeats);
        read(t, "curve_repeats", c.train.curve_repeats);
        read(t, "use_baseline", c.train.use_baseline);
        read(t, "env_group", c.train.env_group);
        read(t, "seed", c.train.seed);
    }
    return c;
}

inline void validate(const RunConfig& c) {
    auto check = [](bool ok, const std::string& what) {
        if (!ok) {
            throw ConfigError("invalid config: " + what);
        }
    };
    check(c.episode_steps >= 1, "episode_steps must be >= 1");
    check(c.testset_size >= 1, "testset_size must be >= 1");
    check(c.pendulum_mpc.horizon >= 1 && c.battery_mpc.horizon >= 1, "horizon must be >= 1");
    check(c.pendulum.dt > 0.0 && c.battery.dt_hours > 0.0, "time steps must be positive");
    check(c.pendulum_q.rows() == 4 && c.pendulum_q.cols() == 4, "pendulum lqr_q must be 4x4");
    check(c.pendulum_r.rows() == 1 && c.pendulum_r.cols() == 1, "pendulum lqr_r must be 1x1");
    check(c.battery_q.rows() == 1 && c.battery_q.cols() == 1, "battery lqr_q must be 1x1");
    check(c.battery_r.rows() == 1 && c.battery_r.cols() == 1, "battery lqr_r must be 1x1");
    check(c.battery.initial_soc_min <= c.battery.initial_soc_max, "initial SoC range is empty");
    check(c.train.gamma >= 0.0 && c.train.gamma < 1.0, "gamma must lie in [0, 1)");
    check(c.train.learning_rate >= 0.0, "learning_rate must be >= 0");
    check(c.train.batch_size >= 1, "batch_size must be >= 1");
    check(c.train.episodes >= 0, "episodes must be >= 0");
    check(c.train.eval_interval >= 1, "eval_interval must be >= 1");
    check(c.train.warmup_episodes >= 1, "warmup_episodes must be >= 1");
    check(c.train.env_group >= 1 && c.train.batch_size % c.train.env_group == 0,
          "env_group must be >= 1 and divide batch_size");
    check(c.train.eval_repeats >= 1 && c.train.curve_repeats >= 1, "repeats must be >= 1");
    check(c.sqp.max_iterations >= 1 && c.sqp.kkt_tolerance > 0.0 && c.sqp.gap_tolerance > 0.0,
          "sqp tolerances must be positive");
}

/// Fingerprint of everything that affects episode outcomes for a fixed seed.
/// Training and output settings are excluded so a test set survives retraining.
[[nodiscard]] inline std::string config_hash(const RunConfig& c) {
    Json j = to_json(c);
    j.erase("train");
    j.erase("output_dir");
    j.erase("testset_size");
    j.erase("master_seed");
    const std::uint64_t h = hash_label(j.dump());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

[[nodiscard]] inline Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open '" + path + "'");
    }
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError("malformed JSON in '" + path + "': " + e.what());
    }
}

inline void write_json_file(const std::string& path, const Json& j) {
    std::ofstream out(path);
    if (!out) {
        throw ConfigError("cannot write '" + path + "'");
    }
    out << j.dump(2) << '\n';
}

[[nodiscard]] inline RunConfig load_config(const std::string& path) {
    RunConfig c = config_from_json(read_json_file(path));
    validate(c);
    return c;
}

}  // namespace etmpc
