#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "etmpc/closed_loop.hpp"
#include "etmpc/harness.hpp"

using namespace etmpc;

namespace {

std::unique_ptr<SystemModel> system_for(SystemKind kind, double noise = 1.0) {
    RunConfig cfg;
    cfg.system = kind;
    cfg.pendulum.noise_std = noise;
    return make_system(cfg);
}

RecomputePolicy coin_flip(const SystemModel& sys) {
    return RecomputePolicy::logistic(initial_policy_params(static_cast<Index>(sys.raw_feature_names().size()), 0.0));
}

PlanState toy_plan() {
    NlpSolution sol;
    for (int k = 0; k <= 3; ++k) {
        sol.x.push_back(Vector::Constant(2, k));
    }
    for (int k = 0; k < 3; ++k) {
        sol.u.push_back(Vector::Constant(1, 0.0));
    }
    return make_plan(sol, 10);
}

}  // namespace

TEST(PredictionError, PlanOffsets) {
    const PlanState p = toy_plan();
    Vector x(2);
    x << 1.5, 0.5;
    EXPECT_EQ(compute_prediction_error(p, x, 11), Vector::Constant(2, 1.0) - x);
    EXPECT_EQ(compute_prediction_error(p, Vector::Zero(2), 10), Vector::Zero(2));
    EXPECT_THROW((void)compute_prediction_error(p, x, 9), ContractViolation);
    EXPECT_THROW((void)compute_prediction_error(p, x, 13), ContractViolation);
    EXPECT_THROW((void)compute_prediction_error(p, Vector::Zero(3), 11), ContractViolation);
}

TEST(Episode, AlwaysSolvesEveryStep) {
    const auto sys = system_for(SystemKind::pendulum);
    const EpisodeRecord r = run_episode(*sys, RecomputePolicy::always(), 100, 4, 5);
    ASSERT_FALSE(r.failed);
    EXPECT_EQ(r.recomputes(), 100);
    EXPECT_EQ(r.recompute_fraction(), 1.0);
    for (const StepRecord& s : r.steps) {
        EXPECT_EQ(s.steps_since, 0);
        EXPECT_EQ(s.decision, s.step > 0);
    }
    EXPECT_EQ(r.steps.front().eps.size(), 0);
}

TEST(Episode, NeverSolvesAtHorizonMultiples) {
    const auto sys = system_for(SystemKind::pendulum);
    const EpisodeRecord r = run_episode(*sys, RecomputePolicy::never(), 100, 4, 5);
    ASSERT_FALSE(r.failed);
    EXPECT_EQ(r.recomputes(), 5);
    for (const StepRecord& s : r.steps) {
        EXPECT_EQ(s.action, s.step % 20 == 0 ? 1 : 0);
        EXPECT_EQ(s.forced, s.step % 20 == 0 && s.step > 0);
    }
}

TEST(Episode, PeriodicCount) {
    const auto sys = system_for(SystemKind::battery);
    for (int t : {1, 3, 7, 20}) {
        for (int T : {20, 45, 100}) {
            const EpisodeRecord r = run_episode(*sys, RecomputePolicy::periodic(t), T, 8, 9);
            EXPECT_EQ(r.recomputes(), (T + t - 1) / t) << "t " << t << " T " << T;
            for (const StepRecord& s : r.steps) {
                EXPECT_EQ(s.action, s.step % t == 0 ? 1 : 0);
            }
        }
    }
}

TEST(Episode, ScheduleInvariantsUnderRandomDecisions) {
    const auto sys = system_for(SystemKind::pendulum);
    const RecomputePolicy p = RecomputePolicy::logistic(initial_policy_params(9, 3.0));  // rarely recomputes
    int max_since = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const EpisodeRecord r = run_episode(*sys, p, 100, seed, seed + 100);
        int since = -1;
        for (const StepRecord& s : r.steps) {
            const int offset = since + 1;
            EXPECT_EQ(s.decision, s.step > 0 && offset <= 19);
            EXPECT_EQ(s.forced, s.step > 0 && offset == 20);
            if (s.decision) {
                EXPECT_EQ(s.grad_log_prob.size(), 19);
            }
            since = s.action == 1 ? 0 : offset;
            EXPECT_EQ(s.steps_since, since);
            EXPECT_LE(s.steps_since, 19);
            max_since = std::max(max_since, s.steps_since);
        }
        EXPECT_FALSE(r.steps.front().decision);
    }
    EXPECT_EQ(max_since, 19);
}

TEST(Episode, Deterministic) {
    const auto sys = system_for(SystemKind::pendulum);
    const RecomputePolicy p = coin_flip(*sys);
    const EpisodeRecord a = run_episode(*sys, p, 60, 42, 43);
    const EpisodeRecord b = run_episode(*sys, p, 60, 42, 43);
    ASSERT_EQ(a.steps.size(), b.steps.size());
    for (size_t i = 0; i < a.steps.size(); ++i) {
        EXPECT_EQ(a.steps[i].x, b.steps[i].x);
        EXPECT_EQ(a.steps[i].u, b.steps[i].u);
        EXPECT_EQ(a.steps[i].action, b.steps[i].action);
        EXPECT_EQ(a.steps[i].cost, b.steps[i].cost);
    }
    EXPECT_EQ(a.terminal_cost, b.terminal_cost);
    std::ostringstream sa, sb;
    write_episode_jsonl(sa, a);
    write_episode_jsonl(sb, b);
    EXPECT_EQ(sa.str(), sb.str());
}

TEST(Episode, ReplayReproducesInputs) {
    for (SystemKind kind : {SystemKind::pendulum, SystemKind::battery}) {
        const auto sys = system_for(kind);
        const EpisodeRecord a = run_episode(*sys, coin_flip(*sys), 60, 7, 8);
        std::vector<int> actions;
        for (const StepRecord& s : a.steps) {
            if (s.decision) {
                actions.push_back(s.action);
            }
        }
        EpisodeOptions opts;
        opts.scripted_actions = actions;
        const EpisodeRecord b = run_episode(*sys, RecomputePolicy::never(), 60, 7, 999, opts);
        ASSERT_EQ(a.steps.size(), b.steps.size());
        for (size_t i = 0; i < a.steps.size(); ++i) {
            EXPECT_EQ(a.steps[i].u, b.steps[i].u) << "step " << i;
            EXPECT_EQ(a.steps[i].action, b.steps[i].action);
        }
    }
}

TEST(Episode, UndiscountedReturnIsTheCostSum) {
    const auto sys = system_for(SystemKind::battery);
    const EpisodeRecord r = run_episode(*sys, RecomputePolicy::periodic(4), 50, 3, 4);
    double sum = r.terminal_cost;
    for (const StepRecord& s : r.steps) {
        sum += s.cost;
    }
    EXPECT_DOUBLE_EQ(r.total_return(), sum);
    double discounted = 0.0;
    for (const StepRecord& s : r.steps) {
        discounted += std::pow(0.9, s.step) * s.cost;
    }
    discounted += std::pow(0.9, 50) * r.terminal_cost;
    EXPECT_NEAR(r.total_return(0.9), discounted, 1e-10);
}

TEST(Episode, NoiseFreePendulumTracksThePlan) {
    const auto sys = system_for(SystemKind::pendulum, 0.0);
    const EpisodeRecord r = run_episode(*sys, RecomputePolicy::never(), 100, 12, 13);
    ASSERT_FALSE(r.failed);
    double worst = 0.0;
    for (const StepRecord& s : r.steps) {
        if (s.eps.size() > 0) {
            worst = std::max(worst, inf_norm(s.eps));
        }
    }
    EXPECT_LT(worst, 1e-6 * 100);
}

TEST(Episode, RecordsFeaturesAtDecisions) {
    const auto sys = system_for(SystemKind::battery);
    EpisodeOptions opts;
    opts.record_features = true;
    const EpisodeRecord r = run_episode(*sys, RecomputePolicy::never(), 40, 1, 2, opts);
    for (const StepRecord& s : r.steps) {
        if (s.decision) {
            ASSERT_EQ(s.features.size(), 11);
            EXPECT_EQ(s.features[10], 1.0);
            EXPECT_EQ(s.grad_log_prob.size(), 0);
        }
    }
}

TEST(Episode, JsonLines) {
    const auto sys = system_for(SystemKind::battery);
    const EpisodeRecord r = run_episode(*sys, RecomputePolicy::periodic(5), 12, 1, 2);
    std::ostringstream os;
    write_episode_jsonl(os, r);
    std::istringstream is(os.str());
    std::string line;
    int lines = 0;
    while (std::getline(is, line)) {
        EXPECT_NO_THROW((void)Json::parse(line));
        ++lines;
    }
    EXPECT_EQ(lines, 12 + 2);
}

TEST(Episode, RejectsMismatchedPolicy) {
    const auto sys = system_for(SystemKind::battery);
    const RecomputePolicy p = RecomputePolicy::logistic(initial_policy_params(9, 0.0));
    EXPECT_THROW((void)run_episode(*sys, p, 10, 1, 2), ContractViolation);
    EXPECT_THROW((void)run_episode(*sys, RecomputePolicy::always(), 0, 1, 2), ContractViolation);
}

TEST(Battery, StateOfChargeStaysInRange) {
    const auto sys = system_for(SystemKind::battery);
    for (const RecomputePolicy& p : {RecomputePolicy::always(), RecomputePolicy::never(), coin_flip(*sys)}) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const EpisodeRecord r = run_episode(*sys, p, 100, seed, seed);
            for (const StepRecord& s : r.steps) {
                EXPECT_GE(s.x[0], 0.0);
                EXPECT_LE(s.x[0], 1.0);
                EXPECT_LE(std::abs(s.u[0]), 360.0);
            }
        }
    }
}

TEST(TestSet, DeterministicAndHashed) {
    RunConfig cfg;
    const TestSet a = build_testset(cfg, 10, 77);
    const TestSet b = build_testset(cfg, 10, 77);
    EXPECT_EQ(a.env_seeds, b.env_seeds);
    EXPECT_EQ(a.policy_seed, b.policy_seed);
    EXPECT_NE(build_testset(cfg, 10, 78).env_seeds, a.env_seeds);
    const TestSet c = testset_from_json(Json::parse(to_json(a).dump()));
    EXPECT_EQ(c.env_seeds, a.env_seeds);
    EXPECT_NO_THROW(check_testset(c, cfg));

    RunConfig other = cfg;
    other.pendulum.noise_std = 0.5;
    EXPECT_THROW(check_testset(c, other), ConfigError);
    other = cfg;
    other.system = SystemKind::battery;
    EXPECT_THROW(check_testset(c, other), ConfigError);
    other = cfg;
    other.train.seed = 99;
    EXPECT_NO_THROW(check_testset(c, other));
}

TEST(Harness, ScheduleFractionsOnATestSet) {
    RunConfig cfg;
    const auto sys = make_system(cfg);
    const TestSet t = build_testset(cfg, 3, 1);
    EXPECT_EQ(evaluate_policy(*sys, RecomputePolicy::always(), t, 3).recompute_fraction, 1.0);
    EXPECT_EQ(evaluate_policy(*sys, RecomputePolicy::never(), t, 3).recompute_fraction, 0.05);
    const PolicyEvaluation p = evaluate_policy(*sys, RecomputePolicy::periodic(20), t, 3);
    EXPECT_EQ(p.recompute_fraction, 0.05);
    EXPECT_EQ(p.repeats, 1);
}

TEST(Harness, StochasticEvaluationIsRepeatableAndParallelSafe) {
    RunConfig cfg;
    cfg.system = SystemKind::battery;
    const auto sys = make_system(cfg);
    const TestSet t = build_testset(cfg, 4, 2);
    const RecomputePolicy p = coin_flip(*sys);
    const PolicyEvaluation a = evaluate_policy(*sys, p, t, 2, 1);
    const PolicyEvaluation b = evaluate_policy(*sys, p, t, 2, 3);
    EXPECT_EQ(a.repeats, 2);
    EXPECT_EQ(a.returns, b.returns);
    EXPECT_EQ(a.mean_return, b.mean_return);
    EXPECT_NE(a.returns[0], a.returns[1]);
}

TEST(Harness, ComparisonRows) {
    PolicyEvaluation a, b, c;
    a.policy = "a";
    a.mean_return = 10.0;
    b.policy = "b";
    b.mean_return = 12.0;
    c.policy = "c";
    c.mean_return = 11.0;
    c.failed_episodes = 1;
    const std::vector<ComparisonRow> rows = compare({a, b, c});
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].gap_to_best, 0.0);
    EXPECT_DOUBLE_EQ(rows[1].gap_to_best, 0.2);
    EXPECT_TRUE(rows[2].flagged);
    EXPECT_FALSE(rows[0].flagged);
    EXPECT_THROW((void)compare({a}), ContractViolation);

    std::ostringstream os;
    write_comparison_table(os, rows);
    EXPECT_NE(os.str().find("20.00%"), std::string::npos);
    EXPECT_NE(os.str().find("FAILED"), std::string::npos);
}

TEST(Parallel, CoversEveryIndexAndRethrows) {
    std::vector<int> hits(100, 0);
    parallel_for(100, 4, [&](int i) { hits[static_cast<size_t>(i)] += 1; });
    EXPECT_EQ(std::count(hits.begin(), hits.end(), 1), 100);
    EXPECT_THROW(parallel_for(10, 3,
                              [](int i) {
                                  if (i == 5) {
                                      throw SolverFailure("boom");
                                  }
                              }),
                 SolverFailure);
}
