// etmpc: test-set generation, training, evaluation, comparison and tracing.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "etmpc/etmpc.hpp"

namespace fs = std::filesystem;
using namespace etmpc;

namespace {

constexpr int exit_usage = 1;
constexpr int exit_runtime = 2;

struct Common {
    std::string config_file;
    std::string system;
    std::string out = "out";
    int jobs = default_jobs();
    bool verbose = false;
};

RunConfig resolve_config(const Common& c, const std::string& fallback_dir = {}) {
    RunConfig cfg;
    if (!c.config_file.empty()) {
        cfg = config_from_json(read_json_file(c.config_file));
    } else if (!fallback_dir.empty() && fs::exists(fs::path(fallback_dir) / "config.json")) {
        cfg = config_from_json(read_json_file((fs::path(fallback_dir) / "config.json").string()));
    }
    if (!c.system.empty()) {
        cfg.system = parse_system(c.system);
    }
    cfg.output_dir = c.out;
    validate(cfg);
    return cfg;
}

/// Output directory with the resolved config and a manifest of what was written.
class OutputDir {
public:
    OutputDir(const RunConfig& cfg, const std::string& command) : dir_(cfg.output_dir), command_(command) {
        fs::create_directories(dir_);
        write_json_file((dir_ / "config.json").string(), to_json(cfg));
        files_.push_back("config.json");
        hash_ = config_hash(cfg);
    }

    [[nodiscard]] fs::path path(const std::string& name) {
        files_.push_back(name);
        fs::create_directories((dir_ / name).parent_path());
        return dir_ / name;
    }

    std::ofstream open(const std::string& name) {
        std::ofstream os(path(name));
        if (!os) {
            throw ConfigError("cannot write '" + (dir_ / name).string() + "'");
        }
        return os;
    }

    ~OutputDir() {
        try {
            write_json_file((dir_ / "manifest.json").string(),
                            {{"command", command_}, {"config_hash", hash_}, {"files", files_}});
        } catch (...) {
        }
    }

    [[nodiscard]] const fs::path& dir() const { return dir_; }

private:
    fs::path dir_;
    std::string command_;
    std::string hash_;
    std::vector<std::string> files_;
};

std::vector<RecomputePolicy> parse_policy_list(const std::string& list) {
    std::vector<RecomputePolicy> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(parse_policy(item));
        }
    }
    if (out.empty()) {
        throw ConfigError("empty policy list");
    }
    return out;
}

void check_policy_system(const RecomputePolicy& p, const RunConfig& cfg) {
    if (p.stochastic() && !p.params.system.empty() && p.params.system != to_string(cfg.system)) {
        throw ConfigError("policy was trained on '" + p.params.system + "' but the config selects '" +
                          to_string(cfg.system) + "'");
    }
}

TestSet testset_for(const RunConfig& cfg, const std::string& dir) {
    TestSet t = load_testset(dir);
    check_testset(t, cfg);
    return t;
}

std::string label_for_file(const std::string& text, const RecomputePolicy& p) {
    return p.stochastic() ? fs::path(text).stem().string() : p.label();
}

int cmd_gen_testset(const Common& c, std::uint64_t seed, int episodes) {
    RunConfig cfg = resolve_config(c);
    cfg.master_seed = seed;
    if (episodes > 0) {
        cfg.testset_size = episodes;
    }
    OutputDir out(cfg, "gen-testset");
    const TestSet t = build_testset(cfg, cfg.testset_size, cfg.master_seed);
    write_json_file(out.path(testset_file).string(), to_json(t));
    std::cout << "wrote " << t.size() << " episodes for " << t.system << " (hash " << t.config_hash << ") to "
              << out.dir() << '\n';
    return 0;
}

int cmd_train(const Common& c, const std::string& testset_dir, long seed, int episodes) {
    RunConfig cfg = resolve_config(c);
    if (seed >= 0) {
        cfg.train.seed = static_cast<std::uint64_t>(seed);
    }
    if (episodes >= 0) {
        cfg.train.episodes = episodes;
    }
    validate(cfg);
    OutputDir out(cfg, "train");
    const auto system = make_system(cfg);
    TestSet t;
    if (testset_dir.empty()) {
        t = build_testset(cfg, cfg.testset_size, cfg.master_seed);
        write_json_file(out.path(std::string("testset/") + testset_file).string(), to_json(t));
        write_json_file(out.path("testset/config.json").string(), to_json(cfg));
    } else {
        t = testset_for(cfg, testset_dir);
    }
    std::ofstream log = out.open("train_log.txt");
    TrainHooks hooks;
    hooks.evaluate = testset_evaluator(*system, t, cfg.train.curve_repeats, c.jobs);
    hooks.on_checkpoint = [&](const CurvePoint& p, const PolicyParams& params) {
        std::ostringstream name;
        name << "checkpoints/checkpoint_" << std::setw(6) << std::setfill('0') << p.episode << ".json";
        write_json_file(out.path(name.str()).string(), to_json(params));
        std::cout << "episode " << p.episode << "  mean G " << p.mean_return << "  recompute " << p.recompute_fraction
                  << std::endl;
    };
    hooks.log = &log;
    const TrainResult r = train(*system, cfg.train, cfg.episode_steps, hooks, c.jobs);
    {
        std::ofstream curve = out.open("learning_curve.csv");
        write_curve_csv(curve, r.curve);
    }
    write_json_file(out.path("policy.json").string(), to_json(r.params));
    log << "episodes " << r.episodes_run << "  clipped updates " << r.clipped_updates << "  failed episodes "
        << r.failed_episodes << (r.diverged ? "  DIVERGED" : "") << '\n';
    std::cout << "trained " << r.episodes_run << " episodes; policy written to " << out.dir() / "policy.json" << '\n';
    return r.diverged ? exit_runtime : 0;
}

int report(OutputDir& out, const std::vector<PolicyEvaluation>& evals) {
    {
        std::ofstream csv = out.open("evaluation.csv");
        write_evaluation_csv(csv, evals);
    }
    {
        std::ofstream per = out.open("episodes.csv");
        write_episode_returns_csv(per, evals);
    }
    return 0;
}

int cmd_eval(const Common& c, const std::string& policy_text, const std::string& testset_dir, int repeats) {
    const RunConfig cfg = resolve_config(c, testset_dir);
    const TestSet t = testset_for(cfg, testset_dir);
    const RecomputePolicy p = parse_policy(policy_text);
    check_policy_system(p, cfg);
    const auto system = make_system(cfg);
    OutputDir out(cfg, "eval");
    const PolicyEvaluation ev = evaluate_policy(*system, p, t, repeats > 0 ? repeats : cfg.train.eval_repeats, c.jobs);
    report(out, {ev});
    std::cout << ev.policy << "  mean G " << ev.mean_return << "  std " << ev.std_return << "  recompute fraction "
              << ev.recompute_fraction << "  failed " << ev.failed_episodes << '\n';
    return 0;
}

int cmd_compare(const Common& c, const std::string& list, const std::string& testset_dir, int repeats) {
    const RunConfig cfg = resolve_config(c, testset_dir);
    const TestSet t = testset_for(cfg, testset_dir);
    const std::vector<RecomputePolicy> policies = parse_policy_list(list);
    for (const RecomputePolicy& p : policies) {
        check_policy_system(p, cfg);
    }
    if (policies.size() < 2) {
        throw ConfigError("compare needs at least two policies");
    }
    const auto system = make_system(cfg);
    OutputDir out(cfg, "compare");
    std::vector<PolicyEvaluation> evals;
    std::stringstream names(list);
    std::string name;
    for (const RecomputePolicy& p : policies) {
        std::getline(names, name, ',');
        PolicyEvaluation ev = evaluate_policy(*system, p, t, repeats > 0 ? repeats : cfg.train.eval_repeats, c.jobs);
        ev.policy = label_for_file(name, p);
        evals.push_back(std::move(ev));
    }
    report(out, evals);
    const std::vector<ComparisonRow> rows = compare(evals);
    {
        std::ofstream csv = out.open("comparison.csv");
        write_comparison_csv(csv, rows);
    }
    std::ofstream txt = out.open("comparison.txt");
    write_comparison_table(txt, rows);
    write_comparison_table(std::cout, rows);
    return 0;
}

void write_trace_market(std::ostream& os, const BatteryEnvironment& env, const EpisodeRecord& rec) {
    const MarketSeries& m = env.market();
    os << "step,P_true,lambda_true,P_base,lambda_base,P_forecast,lambda_forecast,anchor,recompute\n";
    os << std::setprecision(10);
    Forecast f;
    for (const StepRecord& s : rec.steps) {
        if (s.action == 1) {
            f = env.forecast(s.step);
        }
        const int lead = s.step - f.anchor;
        os << s.step << ',' << m.production[s.step] << ',' << m.price[s.step] << ',' << m.production_base[s.step]
           << ',' << m.price_base[s.step] << ',' << f.production[lead] << ',' << f.price[lead] << ',' << f.anchor
           << ',' << s.action << '\n';
    }
}

int cmd_trace(const Common& c, const std::string& policy_text, std::uint64_t seed) {
    const RunConfig cfg = resolve_config(c);
    const RecomputePolicy p = parse_policy(policy_text);
    check_policy_system(p, cfg);
    const auto system = make_system(cfg);
    OutputDir out(cfg, "trace");
    EpisodeOptions opts;
    opts.record_features = true;
    std::ofstream diag;
    if (c.verbose) {
        diag = out.open("diagnostics.jsonl");
        opts.diagnostics = &diag;
    }
    const EpisodeRecord rec =
        run_episode(*system, p, cfg.episode_steps, seed, derive_seed(seed, "trace-policy"), opts);
    {
        std::ofstream os = out.open("episode.jsonl");
        write_episode_jsonl(os, rec);
    }
    if (cfg.system == SystemKind::battery) {
        const auto& battery = dynamic_cast<const BatterySystem&>(*system);
        const auto env = battery.battery_environment(seed, cfg.episode_steps);
        std::ofstream os = out.open("market.csv");
        write_trace_market(os, *env, rec);
    }
    std::cout << rec.policy << "  G " << rec.total_return() << "  recomputes " << rec.recomputes()
              << (rec.failed ? "  FAILED: " + rec.failure : std::string()) << '\n';
    return rec.failed ? exit_runtime : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Event-triggered MPC with a learned recomputation policy"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_file, "JSON config; keys override the defaults");
        sub->add_option("--system", common.system, "pendulum or battery (overrides the config)");
        sub->add_option("--out", common.out, "output directory");
        sub->add_option("--jobs", common.jobs, "worker threads")->check(CLI::PositiveNumber);
        sub->add_flag("--verbose", common.verbose, "write per-solve diagnostics");
    };

    std::uint64_t seed = 2024;
    int episodes = 0;
    auto* gen = app.add_subcommand("gen-testset", "draw a frozen test set");
    add_common(gen);
    gen->add_option("--seed", seed, "master seed");
    gen->add_option("--episodes", episodes, "number of episodes (default: config testset_size)");

    std::string testset;
    long train_seed = -1;
    int train_episodes = -1;
    auto* tr = app.add_subcommand("train", "train the logistic recomputation policy");
    add_common(tr);
    tr->add_option("--testset", testset, "test set directory for the learning curve");
    tr->add_option("--seed", train_seed, "training seed (overrides train.seed)");
    tr->add_option("--episodes", train_episodes, "training episodes (overrides train.episodes)");

    std::string policy;
    int repeats = 0;
    auto* ev = app.add_subcommand("eval", "evaluate one policy on a test set");
    add_common(ev);
    ev->add_option("--policy", policy, "always | never | periodic:t | policy.json")->required();
    ev->add_option("--testset", testset, "test set directory")->required();
    ev->add_option("--repeats", repeats, "repeats for stochastic policies");

    std::string policies;
    auto* cmp = app.add_subcommand("compare", "compare policies on a test set");
    add_common(cmp);
    cmp->add_option("--policies", policies, "comma-separated policy list")->required();
    cmp->add_option("--testset", testset, "test set directory")->required();
    cmp->add_option("--repeats", repeats, "repeats for stochastic policies");

    std::uint64_t trace_seed = 0;
    auto* trc = app.add_subcommand("trace", "run and dump a single episode");
    add_common(trc);
    trc->add_option("--policy", policy, "always | never | periodic:t | policy.json")->required();
    trc->add_option("--seed", trace_seed, "episode seed")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_usage;
    }

    try {
        if (*gen) {
            return cmd_gen_testset(common, seed, episodes);
        }
        if (*tr) {
            return cmd_train(common, testset, train_seed, train_episodes);
        }
        if (*ev) {
            return cmd_eval(common, policy, testset, repeats);
        }
        if (*cmp) {
            return cmd_compare(common, policies, testset, repeats);
        }
        return cmd_trace(common, policy, trace_seed);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const ContractViolation& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << '\n';
        return exit_runtime;
    }
}
