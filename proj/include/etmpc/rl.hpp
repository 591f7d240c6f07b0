#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "closed_loop.hpp"
#include "config.hpp"
#include "features.hpp"
#include "harness.hpp"
#include "parallel.hpp"
#include "policy.hpp"
#include "system.hpp"

namespace etmpc {

struct GradientOptions {
    bool use_baseline = true;
};

/// GPOMDP estimate of dJ/dtheta for a cost J (so theta -= alpha * g descends).
///
/// Each decision point t is credited with C_t = sum_{t' >= t} gamma^t' c_t', the terminal
/// cost entering at t' = T. The baseline at t is the mean C_t of the other episodes that share
/// the environment draw (same env seed), or of the whole batch when an episode has no such
/// partner. It never uses the episode's own actions, so the estimate stays unbiased.
/// Failed episodes are skipped.
[[nodiscard]] inline Vector gpomdp_gradient(const std::vector<EpisodeRecord>& batch, double gamma,
                                            const GradientOptions& options = {}) {
    require(!batch.empty(), "gpomdp_gradient: empty batch");
    require(gamma >= 0.0 && gamma <= 1.0, "gpomdp_gradient: gamma must lie in [0, 1]");

    std::vector<std::vector<double>> to_go;
    std::vector<const EpisodeRecord*> used;
    Index dim = -1;
    for (const EpisodeRecord& rec : batch) {
        if (rec.failed) {
            continue;
        }
        const size_t T = rec.steps.size();
        std::vector<double> c(T + 1, 0.0);
        double acc = std::pow(gamma, static_cast<double>(T)) * rec.terminal_cost;
        c[T] = acc;
        for (size_t t = T; t-- > 0;) {
            acc += std::pow(gamma, static_cast<double>(t)) * rec.steps[t].cost;
            c[t] = acc;
        }
        for (const StepRecord& s : rec.steps) {
            if (s.decision) {
                require(s.grad_log_prob.size() > 0, "gpomdp_gradient: decision point without score");
                require(dim < 0 || s.grad_log_prob.size() == dim, "gpomdp_gradient: inconsistent score length");
                dim = s.grad_log_prob.size();
            }
        }
        to_go.push_back(std::move(c));
        used.push_back(&rec);
    }
    require(!used.empty(), "gpomdp_gradient: every episode in the batch failed");
    if (dim < 0) {
        return Vector();  // no decisions were sampled
    }

    // Leave-one-out mean of C_t over the episodes m' != m in `pool`.
    auto baseline = [&](size_t m, size_t t, bool same_env) {
        double total = 0.0;
        int count = 0;
        for (size_t k = 0; k < used.size(); ++k) {
            if (k == m || t >= to_go[k].size() || (same_env && used[k]->env_seed != used[m]->env_seed)) {
                continue;
            }
            total += to_go[k][t];
            ++count;
        }
        return count > 0 ? std::optional<double>(total / count) : std::nullopt;
    };

    Vector g = Vector::Zero(dim);
    for (size_t m = 0; m < used.size(); ++m) {
        for (const StepRecord& s : used[m]->steps) {
            if (!s.decision) {
                continue;
            }
            const auto t = static_cast<size_t>(s.step);
            double b = 0.0;
            if (options.use_baseline) {
                std::optional<double> v = baseline(m, t, true);
                if (!v) {
                    v = baseline(m, t, false);
                }
                b = v.value_or(0.0);
            }
            g += s.grad_log_prob * (to_go[m][t] - b);
        }
    }
    return g / static_cast<double>(used.size());
}

/// Normalization statistics from `episodes` always-recompute runs, so states and one-step
/// prediction errors are scaled by the regime the trained policy starts from. The plan age is
/// constant there and keeps unit scale.
[[nodiscard]] inline RunningStats warmup_statistics(const SystemModel& system, int steps, int episodes,
                                                    std::uint64_t seed, int jobs = 1) {
    const Index n_raw = static_cast<Index>(system.raw_feature_names().size());
    EpisodeOptions opts;
    opts.record_features = true;
    std::vector<RunningStats> parts(static_cast<size_t>(episodes), RunningStats(2 * n_raw));
    parallel_for(episodes, jobs, [&](int e) {
        const EpisodeRecord rec =
            run_episode(system, RecomputePolicy::always(), steps,
                        derive_seed(seed, "warmup-env", static_cast<std::uint64_t>(e)),
                        derive_seed(seed, "warmup-policy", static_cast<std::uint64_t>(e)), opts);
        for (const StepRecord& s : rec.steps) {
            if (s.decision) {
                parts[static_cast<size_t>(e)].push(s.features.head(2 * n_raw));
            }
        }
    });
    RunningStats stats(2 * n_raw);
    for (const RunningStats& p : parts) {
        stats.merge(p);
    }
    return stats;
}

struct CurvePoint {
    int episode = 0;
    double mean_return = 0.0;
    double std_return = 0.0;
    double recompute_fraction = 0.0;
    int failed_episodes = 0;
};

struct TrainResult {
    PolicyParams params;
    std::vector<CurvePoint> curve;
    std::vector<PolicyParams> checkpoints;  ///< one per curve point
    int episodes_run = 0;
    int clipped_updates = 0;
    int failed_episodes = 0;
    bool diverged = false;
};

using CurveEvaluator = std::function<CurvePoint(const PolicyParams&, int episode)>;

struct TrainHooks {
    CurveEvaluator evaluate;                                  ///< optional
    std::function<void(const CurvePoint&, const PolicyParams&)> on_checkpoint;  ///< optional
    std::ostream* log = nullptr;
};

/// Policy-gradient training of the logistic recomputation policy.
///
/// Normalization statistics are frozen after the warm-up. The curve is evaluated before the
/// first update and every `eval_interval` training episodes.
[[nodiscard]] inline TrainResult train(const SystemModel& system, const TrainConfig& tc, int steps,
                                       const TrainHooks& hooks = {}, int jobs = 1) {
    require(tc.gamma >= 0.0 && tc.gamma < 1.0, "train: gamma must lie in [0, 1)");
    require(tc.learning_rate >= 0.0 && tc.batch_size >= 1 && tc.eval_interval >= 1, "train: invalid config");
    require(tc.env_group >= 1 && tc.batch_size % tc.env_group == 0, "train: env_group must divide batch_size");
    const Index n_raw = static_cast<Index>(system.raw_feature_names().size());

    TrainResult out;
    PolicyParams params = initial_policy_params(n_raw, tc.initial_bias);
    const RunningStats stats = warmup_statistics(system, steps, tc.warmup_episodes, tc.seed, jobs);
    params.mean = stats.mean();
    params.stddev = stats.stddev();
    params.system = system.name();
    params.feature_names = system.raw_feature_names();

    auto checkpoint = [&](int episode) {
        if (!hooks.evaluate) {
            return;
        }
        CurvePoint p = hooks.evaluate(params, episode);
        p.episode = episode;
        out.curve.push_back(p);
        out.checkpoints.push_back(params);
        if (hooks.on_checkpoint) {
            hooks.on_checkpoint(p, params);
        }
        if (hooks.log) {
            *hooks.log << "episode " << episode << "  mean G " << p.mean_return << "  recompute "
                       << p.recompute_fraction << '\n';
        }
    };

    checkpoint(0);
    int done = 0;
    int next_eval = tc.eval_interval;
    while (done < tc.episodes) {
        const int m = std::min(tc.batch_size, tc.episodes - done);
        const RecomputePolicy policy = RecomputePolicy::logistic(params);
        std::vector<EpisodeRecord> batch(static_cast<size_t>(m));
        parallel_for(m, jobs, [&](int b) {
            batch[static_cast<size_t>(b)] = run_episode(system, policy, steps,
                                                        derive_seed(tc.seed, "train-env", static_cast<std::uint64_t>((done + b) / tc.env_group)),
                                                        derive_seed(tc.seed, "train-policy", static_cast<std::uint64_t>(done + b)));
        });
        done += m;
        for (const EpisodeRecord& r : batch) {
            out.failed_episodes += r.failed ? 1 : 0;
        }
        bool all_failed = true;
        for (const EpisodeRecord& r : batch) {
            all_failed = all_failed && r.failed;
        }
        if (!all_failed) {
            Vector g = gpomdp_gradient(batch, tc.gamma, {tc.use_baseline});
            if (g.size() == params.theta.size()) {
                const double norm = g.norm();
                if (tc.gradient_clip > 0.0 && norm > tc.gradient_clip) {
                    g *= tc.gradient_clip / norm;
                    ++out.clipped_updates;
                    if (hooks.log) {
                        *hooks.log << "episode " << done << "  gradient norm " << norm << " clipped\n";
                    }
                }
                params.theta -= tc.learning_rate * g;
            }
        }
        if (!params.theta.allFinite()) {
            out.diverged = true;
            if (hooks.log) {
                *hooks.log << "episode " << done << "  theta diverged, stopping\n";
            }
            break;
        }
        if (done >= next_eval || done == tc.episodes) {
            checkpoint(done);
            while (next_eval <= done) {
                next_eval += tc.eval_interval;
            }
        }
    }
    out.episodes_run = done;
    out.params = params;
    return out;
}

/// Curve evaluator over a frozen test set.
[[nodiscard]] inline CurveEvaluator testset_evaluator(const SystemModel& system, const TestSet& testset, int repeats,
                                                      int jobs = 1) {
    return [&system, testset, repeats, jobs](const PolicyParams& p, int episode) {
        const PolicyEvaluation ev = evaluate_policy(system, RecomputePolicy::logistic(p), testset, repeats, jobs);
        return CurvePoint{episode, ev.mean_return, ev.std_return, ev.recompute_fraction, ev.failed_episodes};
    };
}

inline void write_curve_csv(std::ostream& os, const std::vector<CurvePoint>& curve) {
    os << "episode,mean_return,std_return,recompute_fraction,failed_episodes\n";
    os << std::setprecision(10);
    for (const CurvePoint& p : curve) {
        os << p.episode << ',' << p.mean_return << ',' << p.std_return << ',' << p.recompute_fraction << ','
           << p.failed_episodes << '\n';
    }
}

}  // namespace etmpc
