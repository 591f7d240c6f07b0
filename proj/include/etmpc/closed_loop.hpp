#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "config.hpp"
#include "features.hpp"
#include "lqr.hpp"
#include "plan.hpp"
#include "policy.hpp"
#include "sqp.hpp"
#include "system.hpp"

namespace etmpc {

struct StepRecord {
    int step = 0;
    Vector x;            ///< plant state before the input is applied
    Vector u;            ///< input applied
    Vector eps;          ///< prediction error x_hat - x; empty when no plan was active
    int action = 0;      ///< 1 when the MPC was solved this step
    bool decision = false;  ///< the policy was queried
    bool forced = false;    ///< plan ran out
    int steps_since = 0;    ///< after this step's transition, in [0, N-1]
    double cost = 0.0;
    Vector features;        ///< at decision points, when recorded
    Vector grad_log_prob;   ///< at decision points of a logistic policy
    int solver_iterations = 0;
    bool solver_converged = true;
};

struct EpisodeRecord {
    std::string system;
    std::string policy;
    std::uint64_t env_seed = 0;
    std::uint64_t policy_seed = 0;
    std::vector<StepRecord> steps;
    Vector x_final;
    double terminal_cost = 0.0;
    bool failed = false;
    std::string failure;
    int nonconverged_solves = 0;

    [[nodiscard]] int recomputes() const {
        return static_cast<int>(std::count_if(steps.begin(), steps.end(), [](const StepRecord& s) { return s.action == 1; }));
    }

    [[nodiscard]] double recompute_fraction() const {
        return steps.empty() ? 0.0 : static_cast<double>(recomputes()) / static_cast<double>(steps.size());
    }

    /// G = gamma^T R(s_T) + sum_k gamma^k R_k.
    [[nodiscard]] double total_return(double gamma = 1.0) const {
        double g = 0.0;
        double w = 1.0;
        for (const StepRecord& s : steps) {
            g += w * s.cost;
            w *= gamma;
        }
        return g + w * terminal_cost;
    }
};

struct EpisodeOptions {
    bool record_features = false;  ///< also for non-logistic policies
    /// Replaces sampling at decision points, in order. Used to replay an episode.
    std::optional<std::vector<int>> scripted_actions;
    std::ostream* diagnostics = nullptr;  ///< one JSON line per solve
};

namespace detail {

inline void write_solve_diagnostics(std::ostream& os, const EpisodeRecord& rec, int step, const NlpSolution& sol,
                                    const SolveDiagnostics& diag) {
    Json iters = Json::array();
    for (const SqpIterationLog& it : diag.iterations) {
        iters.push_back({{"iteration", it.iteration},
                         {"kkt", it.kkt},
                         {"max_gap", it.max_gap},
                         {"merit", it.merit},
                         {"step", it.step},
                         {"qp_iterations", it.qp_iterations}});
    }
    const Json line = {{"env_seed", rec.env_seed}, {"step", step},
                       {"iterations", sol.iterations}, {"converged", sol.converged},
                       {"objective", sol.objective},   {"kkt_residual", sol.kkt_residual},
                       {"max_gap", sol.max_gap},       {"log", iters}};
    os << line.dump() << '\n';
}

}  // namespace detail

/// Runs one episode of the triggered loop.
///
/// Step 0 always solves. At offsets 1..N-1 the policy decides; reaching offset N forces a
/// solve. Between solves the plan input is corrected by the LQR on the prediction error.
/// A solver exception ends the episode and marks it failed.
[[nodiscard]] inline EpisodeRecord run_episode(const SystemModel& system, const RecomputePolicy& policy, int steps,
                                               std::uint64_t env_seed, std::uint64_t policy_seed,
                                               const EpisodeOptions& options = {}) {
    require(steps >= 1, "run_episode: steps must be >= 1");
    if (policy.stochastic()) {
        require(policy.params.raw_size() == static_cast<Index>(system.raw_feature_names().size()),
                "run_episode: policy features do not match system '" + system.name() + "'");
    }
    EpisodeRecord rec;
    rec.system = system.name();
    rec.policy = policy.label();
    rec.env_seed = env_seed;
    rec.policy_seed = policy_seed;
    rec.steps.reserve(static_cast<size_t>(steps));

    const int N = system.horizon();
    const Vector lo = system.u_lower();
    const Vector hi = system.u_upper();
    const LqrGain& gain = system.lqr();
    auto env = system.environment(env_seed, steps);
    Rng rng(policy_seed);
    size_t scripted_next = 0;

    Vector x = env->initial_state();
    Vector u_prev = Vector::Zero(lo.size());
    std::optional<PlanState> plan;

    for (int i = 0; i < steps; ++i) {
        StepRecord r;
        r.step = i;
        r.x = x;
        const int offset = plan ? i - plan->anchor_time : 0;
        bool solve = !plan;
        if (plan && offset >= N) {
            solve = true;
            r.forced = true;
        } else if (plan) {
            r.eps = compute_prediction_error(*plan, x, i);
            Vector features;
            if (policy.stochastic() || options.record_features) {
                const AugmentedState s{x, plan->x_hat.front(), offset, env->observed_parameters(i)};
                const Vector raw = system.raw_features(s, r.eps);
                features = policy.stochastic() ? build_features(raw, policy.params.mean, policy.params.stddev)
                                               : build_features(raw, Vector::Zero(2 * raw.size()),
                                                                Vector::Ones(2 * raw.size()));
            }
            int a = 0;
            if (options.scripted_actions) {
                require(scripted_next < options.scripted_actions->size(), "run_episode: scripted actions exhausted");
                a = (*options.scripted_actions)[scripted_next++];
            } else {
                a = sample_action(policy, features, i, rng);
            }
            if (policy.stochastic()) {
                r.grad_log_prob = log_prob_grad(policy.params.theta, features, a);
            }
            r.features = std::move(features);
            r.decision = true;
            solve = a == 1;
        }

        Vector u;
        if (solve) {
            OcpSpec& spec = env->problem_at(i);
            spec.u_previous = u_prev;
            std::optional<NlpSolution> warm;
            if (plan) {
                warm = shift_warm_start(spec, plan->solution, std::min(offset, N));
            }
            SolveDiagnostics diag;
            NlpSolution sol;
            try {
                sol = solve_ocp(spec, x, warm, system.sqp(), options.diagnostics ? &diag : nullptr);
            } catch (const SolverFailure& e) {
                rec.failed = true;
                rec.failure = "step " + std::to_string(i) + ", env seed " + std::to_string(env_seed) + ": " + e.what();
                break;
            }
            if (options.diagnostics) {
                detail::write_solve_diagnostics(*options.diagnostics, rec, i, sol, diag);
            }
            r.solver_iterations = sol.iterations;
            r.solver_converged = sol.converged;
            rec.nonconverged_solves += sol.converged ? 0 : 1;
            plan = make_plan(std::move(sol), i);
            r.action = 1;
            r.steps_since = 0;
            u = clamp_input(plan->u_mpc.front(), lo, hi);
        } else {
            // Feedback on x - x_hat = -eps pulls the plant back onto the plan.
            u = clamp_input(plan->u_mpc[static_cast<size_t>(offset)] + compensate(gain, -r.eps), lo, hi);
            r.steps_since = offset;
        }
        r.u = u;
        r.cost = env->step_cost(i, x, u, r.action);
        x = env->plant_step(i, x, u, r.action);
        u_prev = u;
        rec.steps.push_back(std::move(r));
    }
    rec.x_final = x;
    rec.terminal_cost = rec.failed ? 0.0 : env->terminal_cost(x);
    return rec;
}

namespace detail {

inline Json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace detail

/// One header line, one line per step, one terminal line.
inline void write_episode_jsonl(std::ostream& os, const EpisodeRecord& rec) {
    using detail::vector_json;
    os << Json{{"type", "episode"},       {"system", rec.system},       {"policy", rec.policy},
               {"env_seed", rec.env_seed}, {"policy_seed", rec.policy_seed}, {"steps", rec.steps.size()}}
              .dump()
       << '\n';
    for (const StepRecord& s : rec.steps) {
        Json j = {{"type", "step"},         {"step", s.step},
                  {"x", vector_json(s.x)},  {"u", vector_json(s.u)},
                  {"action", s.action},     {"decision", s.decision},
                  {"forced", s.forced},     {"steps_since", s.steps_since},
                  {"cost", s.cost},         {"solver_iterations", s.solver_iterations},
                  {"solver_converged", s.solver_converged}};
        if (s.eps.size() > 0) {
            j["eps"] = vector_json(s.eps);
        }
        if (s.features.size() > 0) {
            j["features"] = vector_json(s.features);
        }
        if (s.grad_log_prob.size() > 0) {
            j["grad_log_prob"] = vector_json(s.grad_log_prob);
        }
        os << j.dump() << '\n';
    }
    os << Json{{"type", "terminal"},
               {"x", vector_json(rec.x_final)},
               {"terminal_cost", rec.terminal_cost},
               {"return", rec.total_return()},
               {"recomputes", rec.recomputes()},
               {"failed", rec.failed},
               {"failure", rec.failure},
               {"nonconverged_solves", rec.nonconverged_solves}}
              .dump()
       << '\n';
}

}  // namespace etmpc
