#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "closed_loop.hpp"
#include "config.hpp"
#include "parallel.hpp"
#include "policy.hpp"
#include "random.hpp"
#include "system.hpp"

namespace etmpc {

/// Pre-drawn episode randomness shared by every policy under evaluation.
struct TestSet {
    std::string system;
    std::uint64_t master_seed = 0;
    int steps = 0;
    std::string config_hash;
    std::vector<std::uint64_t> env_seeds;
    std::uint64_t policy_seed = 0;  ///< root of the policy-sampling streams

    [[nodiscard]] int size() const { return static_cast<int>(env_seeds.size()); }
};

[[nodiscard]] inline TestSet build_testset(const RunConfig& cfg, int n, std::uint64_t master_seed) {
    require(n >= 1, "build_testset: need at least one episode");
    TestSet t;
    t.system = to_string(cfg.system);
    t.master_seed = master_seed;
    t.steps = cfg.episode_steps;
    t.config_hash = config_hash(cfg);
    const std::uint64_t env_root = derive_seed(master_seed, "testset-env");
    for (int e = 0; e < n; ++e) {
        t.env_seeds.push_back(derive_seed(env_root, static_cast<std::uint64_t>(e)));
    }
    t.policy_seed = derive_seed(master_seed, "testset-policy");
    return t;
}

[[nodiscard]] inline Json to_json(const TestSet& t) {
    return {{"system", t.system},           {"master_seed", t.master_seed}, {"steps", t.steps},
            {"config_hash", t.config_hash}, {"env_seeds", t.env_seeds},     {"policy_seed", t.policy_seed}};
}

[[nodiscard]] inline TestSet testset_from_json(const Json& j) {
    TestSet t;
    try {
        t.system = j.at("system").get<std::string>();
        t.master_seed = j.at("master_seed").get<std::uint64_t>();
        t.steps = j.at("steps").get<int>();
        t.config_hash = j.at("config_hash").get<std::string>();
        t.env_seeds = j.at("env_seeds").get<std::vector<std::uint64_t>>();
        t.policy_seed = j.at("policy_seed").get<std::uint64_t>();
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("malformed test set: ") + e.what());
    }
    if (t.env_seeds.empty() || t.steps < 1) {
        throw ConfigError("malformed test set: no episodes");
    }
    return t;
}

inline const char* testset_file = "testset.json";

[[nodiscard]] inline TestSet load_testset(const std::filesystem::path& dir) {
    return testset_from_json(read_json_file((dir / testset_file).string()));
}

/// Refuses to evaluate on a test set generated under different dynamics or costs.
inline void check_testset(const TestSet& t, const RunConfig& cfg) {
    if (t.system != to_string(cfg.system)) {
        throw ConfigError("test set is for system '" + t.system + "' but the config selects '" +
                          to_string(cfg.system) + "'");
    }
    const std::string h = config_hash(cfg);
    if (t.config_hash != h) {
        throw ConfigError("config hash mismatch: test set " + t.config_hash + ", current config " + h);
    }
    if (t.steps != cfg.episode_steps) {
        throw ConfigError("test set episode length differs from config episode_steps");
    }
}

struct PolicyEvaluation {
    std::string policy;
    int repeats = 1;
    double mean_return = 0.0;
    double std_return = 0.0;         ///< over all episodes and repeats
    double repeat_std = 0.0;         ///< of the per-repeat test-set means
    double recompute_fraction = 0.0;
    int failed_episodes = 0;
    int nonconverged_solves = 0;
    std::vector<std::vector<double>> returns;    ///< [repeat][episode]
    std::vector<std::vector<double>> fractions;  ///< [repeat][episode]
};

[[nodiscard]] inline std::uint64_t evaluation_policy_seed(const TestSet& t, int repeat, int episode) {
    return derive_seed(derive_seed(t.policy_seed, static_cast<std::uint64_t>(repeat)),
                       static_cast<std::uint64_t>(episode));
}

/// Mean undiscounted return over the test set. Deterministic policies run once.
[[nodiscard]] inline PolicyEvaluation evaluate_policy(const SystemModel& system, const RecomputePolicy& policy,
                                                      const TestSet& testset, int repeats, int jobs = 1) {
    require(repeats >= 1, "evaluate_policy: repeats must be >= 1");
    require(testset.system == system.name(), "evaluate_policy: test set is for another system");
    PolicyEvaluation ev;
    ev.policy = policy.label();
    ev.repeats = policy.stochastic() ? repeats : 1;
    const int n = testset.size();
    std::vector<EpisodeRecord> records(static_cast<size_t>(ev.repeats * n));
    parallel_for(ev.repeats * n, jobs, [&](int idx) {
        const int r = idx / n;
        const int e = idx % n;
        records[static_cast<size_t>(idx)] = run_episode(system, policy, testset.steps,
                                                        testset.env_seeds[static_cast<size_t>(e)],
                                                        evaluation_policy_seed(testset, r, e));
    });
    double sum = 0.0;
    double sq = 0.0;
    long recomputes = 0;
    long steps = 0;
    std::vector<double> repeat_means;
    for (int r = 0; r < ev.repeats; ++r) {
        std::vector<double> g(static_cast<size_t>(n));
        std::vector<double> f(static_cast<size_t>(n));
        double rsum = 0.0;
        for (int e = 0; e < n; ++e) {
            const EpisodeRecord& rec = records[static_cast<size_t>(r * n + e)];
            g[static_cast<size_t>(e)] = rec.failed ? std::numeric_limits<double>::quiet_NaN() : rec.total_return();
            f[static_cast<size_t>(e)] = rec.recompute_fraction();
            ev.failed_episodes += rec.failed ? 1 : 0;
            ev.nonconverged_solves += rec.nonconverged_solves;
            if (!rec.failed) {
                sum += g[static_cast<size_t>(e)];
                sq += g[static_cast<size_t>(e)] * g[static_cast<size_t>(e)];
                rsum += g[static_cast<size_t>(e)];
            }
            recomputes += rec.recomputes();
            steps += static_cast<long>(rec.steps.size());
        }
        repeat_means.push_back(rsum / n);
        ev.returns.push_back(std::move(g));
        ev.fractions.push_back(std::move(f));
    }
    const double count = static_cast<double>(ev.repeats * n - ev.failed_episodes);
    ev.mean_return = count > 0 ? sum / count : std::numeric_limits<double>::quiet_NaN();
    ev.std_return = count > 0 ? std::sqrt(std::max(0.0, sq / count - ev.mean_return * ev.mean_return)) : 0.0;
    ev.recompute_fraction = steps > 0 ? static_cast<double>(recomputes) / static_cast<double>(steps) : 0.0;
    double rv = 0.0;
    for (double m : repeat_means) {
        const double mean = sum / std::max(1.0, count);
        rv += (m - mean) * (m - mean);
    }
    ev.repeat_std = std::sqrt(rv / ev.repeats);
    return ev;
}

inline void write_evaluation_csv(std::ostream& os, const std::vector<PolicyEvaluation>& evals) {
    os << "policy,mean_G,std_G,repeat_std_G,recompute_fraction,repeats,failed_episodes\n";
    os << std::setprecision(10);
    for (const PolicyEvaluation& e : evals) {
        os << e.policy << ',' << e.mean_return << ',' << e.std_return << ',' << e.repeat_std << ','
           << e.recompute_fraction << ',' << e.repeats << ',' << e.failed_episodes << '\n';
    }
}

inline void write_episode_returns_csv(std::ostream& os, const std::vector<PolicyEvaluation>& evals) {
    os << "policy,repeat,episode,G,recompute_fraction\n";
    os << std::setprecision(10);
    for (const PolicyEvaluation& e : evals) {
        for (size_t r = 0; r < e.returns.size(); ++r) {
            for (size_t k = 0; k < e.returns[r].size(); ++k) {
                os << e.policy << ',' << r << ',' << k << ',' << e.returns[r][k] << ',' << e.fractions[r][k] << '\n';
            }
        }
    }
}

struct ComparisonRow {
    std::string policy;
    double mean_return = 0.0;
    double std_return = 0.0;
    double recompute_fraction = 0.0;
    double gap_to_best = 0.0;  ///< (G - G_best) / |G_best|, costs so lower is better
    bool flagged = false;      ///< some episode failed
};

[[nodiscard]] inline std::vector<ComparisonRow> compare(const std::vector<PolicyEvaluation>& evals) {
    require(evals.size() >= 2, "compare: need at least two policies");
    double best = std::numeric_limits<double>::infinity();
    for (const PolicyEvaluation& e : evals) {
        if (std::isfinite(e.mean_return)) {
            best = std::min(best, e.mean_return);
        }
    }
    std::vector<ComparisonRow> rows;
    for (const PolicyEvaluation& e : evals) {
        ComparisonRow r{e.policy, e.mean_return, e.std_return, e.recompute_fraction, 0.0, e.failed_episodes > 0};
        const double scale = std::abs(best) > 0.0 ? std::abs(best) : 1.0;
        r.gap_to_best = (e.mean_return - best) / scale;
        rows.push_back(r);
    }
    return rows;
}

[[nodiscard]] inline std::vector<ComparisonRow> compare(const SystemModel& system,
                                                        const std::vector<RecomputePolicy>& policies,
                                                        const TestSet& testset, int repeats, int jobs = 1) {
    std::vector<PolicyEvaluation> evals;
    for (const RecomputePolicy& p : policies) {
        evals.push_back(evaluate_policy(system, p, testset, repeats, jobs));
    }
    return compare(evals);
}

inline void write_comparison_csv(std::ostream& os, const std::vector<ComparisonRow>& rows) {
    os << "policy,mean_G,std_G,recompute_fraction,gap_to_best,flagged\n";
    os << std::setprecision(10);
    for (const ComparisonRow& r : rows) {
        os << r.policy << ',' << r.mean_return << ',' << r.std_return << ',' << r.recompute_fraction << ','
           << r.gap_to_best << ',' << (r.flagged ? 1 : 0) << '\n';
    }
}

inline void write_comparison_table(std::ostream& os, const std::vector<ComparisonRow>& rows) {
    size_t width = 6;
    for (const ComparisonRow& r : rows) {
        width = std::max(width, r.policy.size());
    }
    const auto w = static_cast<int>(width);
    os << std::left << std::setw(w) << "policy" << std::right << std::setw(14) << "mean G" << std::setw(12)
       << "std G" << std::setw(12) << "recompute" << std::setw(12) << "gap" << "  flag\n";
    for (const ComparisonRow& r : rows) {
        std::ostringstream gap;
        gap << std::fixed << std::setprecision(2) << 100.0 * r.gap_to_best << '%';
        os << std::left << std::setw(w) << r.policy << std::right << std::fixed << std::setprecision(5)
           << std::setw(14) << r.mean_return << std::setw(12) << r.std_return << std::setprecision(3)
           << std::setw(12) << r.recompute_fraction << std::setw(12) << gap.str() << (r.flagged ? "  FAILED" : "")
           << '\n';
    }
    os.unsetf(std::ios::floatfield);
}

}  // namespace etmpc
