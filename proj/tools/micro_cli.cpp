#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "micro/attacks.hpp"
#include "micro/config.hpp"
#include "micro/datagen.hpp"
#include "micro/tabular.hpp"

namespace {

using namespace micro;

constexpr const char* kUsage = R"(usage: micro <command> [--config FILE] [--key value ...]

commands:
  gen-data        train a behavior policy and write one dataset tier
  train           train an agent on a dataset (dynamics model + policy)
  eval            evaluate a checkpointed policy on the clean environment
  attack          evaluate under observation attacks over an epsilon grid
  sweep           evaluate across gravity/friction multiplier grids
  verify-tabular  run the tabular operator property suite on the fixtures

Any configuration key can be set with --key value (also --key-with-dashes);
--config FILE applies a key = value file first, then the flags. Exit codes:
0 ok, 1 invalid arguments or configuration, 2 runtime failure.
)";

std::string flag_to_key(std::string f) {
    require_arg(f.rfind("--", 0) == 0 && f.size() > 2, "unknown argument '" + f + "'");
    f.erase(0, 2);
    std::replace(f.begin(), f.end(), '-', '_');
    return f;
}

RunConfig parse_args(int argc, char** argv) {
    RunConfig cfg;
    // config file first, regardless of flag order: flags > file > defaults
    for (int i = 2; i < argc; ++i) {
        if (std::string(argv[i]) == "--config") {
            require_arg(i + 1 < argc, "--config needs a path");
            load_config_file(cfg, argv[i + 1]);
        }
    }
    for (int i = 2; i < argc; ++i) {
        const std::string flag = argv[i];
        if (flag == "--config") {
            ++i;
            continue;
        }
        require_arg(i + 1 < argc, "flag '" + flag + "' needs a value");
        set_config_key(cfg, flag_to_key(flag), argv[i + 1]);
        ++i;
    }
    cfg.validate();
    return cfg;
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
    const std::string dir = resolve_out_dir(cfg);
    std::filesystem::create_directories(dir);
    return dir + "/" + name;
}

void print_resolved(const RunConfig& cfg) {
    std::cout << "# resolved configuration\n" << serialize_config(cfg) << "\n";
}

std::string seed_tag(const RunConfig& cfg) { return "seed" + std::to_string(cfg.seed); }

int cmd_gen_data(const RunConfig& cfg) {
    const BehaviorArtifacts run = train_behavior(PendulumParams{}, datagen_config(cfg), cfg.seed);
    std::printf("behavior returns: random %.3f  medium %.3f (step %zu)  expert %.3f\n",
                run.random_return, run.medium_return, run.medium_step, run.expert_return);
    const Dataset ds =
        assemble_tier(cfg.tier, cfg.n, cfg.seed, run, PendulumParams{}, datagen_config(cfg));
    const std::string path = cfg.dataset.empty()
                                 ? out_path(cfg, cfg.env + "-" + cfg.tier + "-" + seed_tag(cfg) + ".jsonl")
                                 : cfg.dataset;
    save_dataset(path, ds);
    std::printf("wrote %zu transitions to %s\n", ds.rows.size(), path.c_str());
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    require_arg(!cfg.dataset.empty(), "train: --dataset is required");
    const Dataset ds = load_dataset(cfg.dataset);
    require_arg(ds.env == cfg.env, "train: dataset env '" + ds.env + "' does not match config");
    std::printf("dataset: %s (%zu transitions, tier %s)\n", cfg.dataset.c_str(), ds.rows.size(),
                ds.tier.c_str());

    GaussianEnsemble ens;
    try {
        EnsembleTrainReport report;
        ens = train_ensemble(ds.rows, ds.obs_dim, ds.act_dim, model_config(cfg), cfg.seed,
                             &report);
        std::printf("dynamics: %zu members, elites", ens.models.size());
        for (size_t e : ens.elites) std::printf(" %zu", e);
        std::printf("\n");
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(std::string("train: dynamics stage: ") + e.what());
    }

    const std::string ck_path =
        cfg.checkpoint.empty() ? out_path(cfg, "checkpoint-" + seed_tag(cfg) + ".bin")
                               : cfg.checkpoint;
    const std::string metrics_path = out_path(cfg, "metrics-" + seed_tag(cfg) + ".jsonl");
    std::ofstream metrics(metrics_path);
    require(metrics.good(), "train: cannot open " + metrics_path);

    Agent ag;
    try {
        ag = train(agent_config(cfg), ds.rows, ens, PendulumParams{}, cfg.seed, &metrics,
                   ck_path, cfg.checkpoint_every, cfg.resume);
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(std::string("train: agent stage: ") + e.what());
    }

    Rng eval_rng(cfg.seed, "eval");
    const EvalStats es =
        evaluate_policy(ag.policy, PendulumParams{}, cfg.eval_episodes, cfg.eval_horizon, eval_rng);
    std::printf("final return: %.3f +- %.3f over %zu episodes\n", es.mean, es.stddev,
                cfg.eval_episodes);
    std::printf("checkpoint: %s\nmetrics: %s\n", ck_path.c_str(), metrics_path.c_str());
    return 0;
}

Agent load_checkpoint_agent(const RunConfig& cfg) {
    require_arg(!cfg.checkpoint.empty(), "a checkpoint path is required (--checkpoint)");
    const Checkpoint ck = Checkpoint::load(cfg.checkpoint);
    return load_agent(ck, agent_config(cfg));
}

int cmd_eval(const RunConfig& cfg) {
    const Agent ag = load_checkpoint_agent(cfg);
    Rng rng(cfg.seed, "eval");
    const EvalStats es =
        evaluate_policy(ag.policy, PendulumParams{}, cfg.eval_episodes, cfg.eval_horizon, rng);
    std::printf("return: %.6f +- %.6f over %zu episodes of %zu steps\n", es.mean, es.stddev,
                cfg.eval_episodes, cfg.eval_horizon);
    const std::string path = out_path(cfg, "eval-" + seed_tag(cfg) + ".json");
    std::ofstream out(path);
    require(out.good(), "eval: cannot open " + path);
    out << "{\"mean\": " << detail::fmt_double(es.mean) << ", \"std\": "
        << detail::fmt_double(es.stddev) << ", \"episodes\": " << cfg.eval_episodes
        << ", \"horizon\": " << cfg.eval_horizon << "}\n";
    std::printf("report: %s\n", path.c_str());
    return 0;
}

Vec attack_scale(const RunConfig& cfg) {
    if (cfg.dataset.empty()) return Vec(PendulumEnv::obs_dim, 1.0);
    const Dataset ds = load_dataset(cfg.dataset);
    require_arg(ds.obs_dim == PendulumEnv::obs_dim, "attack: dataset obs dim mismatch");
    require_arg(!ds.rows.empty(), "attack: dataset has no rows to normalize against");
    return ds.obs_stats().std;
}

int cmd_attack(const RunConfig& cfg) {
    const Agent ag = load_checkpoint_agent(cfg);
    const Vec scale = attack_scale(cfg);
    const std::vector<double> eps_grid = parse_double_list(cfg.attack_eps, "attack_eps");

    const std::string path = out_path(cfg, "attack-" + seed_tag(cfg) + ".jsonl");
    std::ofstream out(path);
    require(out.good(), "attack: cannot open " + path);

    for (const std::string& kind : detail::split_list(cfg.attack_kinds)) {
        AttackSpec spec;
        spec.kind = kind == "ra" ? AttackKind::RA : kind == "ad" ? AttackKind::AD : AttackKind::MQ;
        spec.n_candidates = cfg.attack_candidates;
        spec.seed = cfg.seed;
        for (double eps : eps_grid) {
            spec.eps = eps;
            const EvalStats es = evaluate_under_attack(ag.policy, ag.critics, PendulumParams{},
                                                       spec, cfg.eval_episodes, cfg.eval_horizon,
                                                       scale);
            std::printf("%-2s eps=%-8g return %.6f +- %.6f\n", kind.c_str(), eps, es.mean,
                        es.stddev);
            out << "{\"kind\": \"" << kind << "\", \"eps\": " << detail::fmt_double(eps)
                << ", \"mean\": " << detail::fmt_double(es.mean)
                << ", \"std\": " << detail::fmt_double(es.stddev) << "}\n";
        }
    }
    require(out.good(), "attack: write failed for " + path);
    std::printf("report: %s\n", path.c_str());
    return 0;
}

int cmd_sweep(const RunConfig& cfg) {
    const Agent ag = load_checkpoint_agent(cfg);
    SweepGrid grid;
    grid.gravity = parse_double_list(cfg.sweep_gravity, "sweep_gravity");
    grid.friction = parse_double_list(cfg.sweep_friction, "sweep_friction");
    const Tensor cells = sweep_env_params(ag.policy, PendulumParams{}, grid, cfg.eval_episodes,
                                          cfg.eval_horizon, cfg.seed);

    const std::string path = out_path(cfg, "sweep-" + seed_tag(cfg) + ".jsonl");
    std::ofstream out(path);
    require(out.good(), "sweep: cannot open " + path);
    for (size_t gi = 0; gi < grid.gravity.size(); ++gi)
        for (size_t fi = 0; fi < grid.friction.size(); ++fi) {
            std::printf("g=%-6g f=%-6g return %.6f\n", grid.gravity[gi], grid.friction[fi],
                        cells.at(gi, fi));
            out << "{\"g_mult\": " << detail::fmt_double(grid.gravity[gi])
                << ", \"f_mult\": " << detail::fmt_double(grid.friction[fi])
                << ", \"mean\": " << detail::fmt_double(cells.at(gi, fi)) << "}\n";
        }
    require(out.good(), "sweep: write failed for " + path);
    std::printf("report: %s\n", path.c_str());
    return 0;
}

// ---- tabular property suite -------------------------------------------------

QTable random_q(const TabularMDP& mdp, Rng& rng) {
    QTable q = make_q(mdp);
    for (Vec& row : q)
        for (double& x : row) x = rng.uniform(0.0, mdp.q_max());
    return q;
}

struct Verdict {
    std::string fixture, property;
    bool pass;
    double measure;
    const char* note;
};

void check_contraction(const TabularMDP& mdp, const std::string& name,
                       const std::function<QTable(const QTable&)>& op, const char* label,
                       Rng& rng, std::vector<Verdict>& out) {
    double worst = 0.0;
    bool pass = true;
    for (size_t i = 0; i < 200; ++i) {
        const QTable q1 = random_q(mdp, rng), q2 = random_q(mdp, rng);
        const double lhs = q_diff_inf(op(q1), op(q2));
        const double rhs = mdp.gamma * q_diff_inf(q1, q2) + 1e-9;
        worst = std::max(worst, lhs - rhs);
        if (lhs > rhs) pass = false;
    }
    out.push_back({name, std::string("contraction (") + label + ")", pass, worst,
                   "max excess over gamma bound"});
}

int cmd_verify_tabular(const RunConfig& cfg) {
    std::vector<std::string> files;
    {
        std::error_code ec;
        for (const auto& entry : std::filesystem::directory_iterator(cfg.fixtures, ec))
            if (entry.path().extension() == ".mdp") files.push_back(entry.path().string());
        require(!ec, "verify-tabular: cannot read fixture directory " + cfg.fixtures);
    }
    require(!files.empty(), "verify-tabular: no .mdp fixtures in " + cfg.fixtures);
    std::sort(files.begin(), files.end());

    const Vec eps_grid{0.0, 0.25, 0.5, 1.0, 2.0};
    std::vector<Verdict> verdicts;
    for (const std::string& path : files) {
        const std::string name = std::filesystem::path(path).filename().string();
        TabularMDP mdp;
        try {
            mdp = load_mdp(path);
        } catch (const std::exception& e) {
            std::printf("[%s] load FAIL: %s\n", name.c_str(), e.what());
            return 2;
        }
        Rng rng(cfg.seed, "verify");
        const Vec lg = lambda_grid(mdp.gamma);

        check_contraction(mdp, name, [&](const QTable& q) { return bellman_standard(mdp, q); },
                          "standard", rng, verdicts);
        check_contraction(mdp, name,
                          [&](const QTable& q) { return bellman_state_form(mdp, q, 0.5); },
                          "state form", rng, verdicts);
        check_contraction(mdp, name,
                          [&](const QTable& q) { return bellman_robust_dual(mdp, q, 0.25, lg); },
                          "dual", rng, verdicts);

        {  // pessimism: the state-form backup never exceeds the standard one
            double worst = -1e300;
            bool pass = true;
            for (size_t i = 0; i < 50; ++i) {
                const QTable q = random_q(mdp, rng);
                const QTable std_q = bellman_standard(mdp, q);
                const QTable rob_q = bellman_state_form(mdp, q, 0.5);
                for (size_t s = 0; s < mdp.n_states; ++s)
                    for (size_t a = 0; a < mdp.n_actions; ++a) {
                        worst = std::max(worst, rob_q[s][a] - std_q[s][a]);
                        if (rob_q[s][a] > std_q[s][a] + 1e-12) pass = false;
                    }
            }
            verdicts.push_back({name, "pessimism", pass, worst, "max robust minus standard"});
        }

        {  // monotone non-increasing in the uncertainty radius
            double worst = -1e300;
            bool pass = true;
            for (size_t i = 0; i < 20; ++i) {
                const QTable q = random_q(mdp, rng);
                QTable prev = bellman_state_form(mdp, q, eps_grid[0]);
                for (size_t k = 1; k < eps_grid.size(); ++k) {
                    const QTable cur = bellman_state_form(mdp, q, eps_grid[k]);
                    for (size_t s = 0; s < mdp.n_states; ++s)
                        for (size_t a = 0; a < mdp.n_actions; ++a) {
                            worst = std::max(worst, cur[s][a] - prev[s][a]);
                            if (cur[s][a] > prev[s][a] + 1e-12) pass = false;
                        }
                    prev = cur;
                }
            }
            verdicts.push_back({name, "radius monotonicity", pass, worst,
                                "max increase along the radius grid"});
        }

        {  // dual against brute-force enumeration on the kernel ball: weak
           // duality everywhere, tight agreement at the operator's own fixed
           // point with radii that are whole multiples of the mesh
            bool pass = true;
            for (size_t i = 0; i < 3; ++i) {
                const QTable q = random_q(mdp, rng);
                const QTable dual = bellman_robust_dual(mdp, q, 0.5, lg);
                const QTable brute = bellman_robust_bruteforce(mdp, q, 0.5, 0.02);
                for (size_t s = 0; s < mdp.n_states; ++s)
                    for (size_t a = 0; a < mdp.n_actions; ++a)
                        if (dual[s][a] > brute[s][a] + 1e-9) pass = false;
            }
            double gap = 0.0;
            for (double eps : {0.12, 0.5, 1.0}) {
                const auto op = [&](const QTable& q) {
                    return bellman_robust_dual(mdp, q, eps, lg);
                };
                const QTable fix = iterate_to_fixpoint(op, make_q(mdp), 1e-8, mdp.q_max()).q;
                const QTable dual = bellman_robust_dual(mdp, fix, eps, lg);
                const QTable brute = bellman_robust_bruteforce(mdp, fix, eps, 0.02);
                gap = std::max(gap, q_diff_inf(dual, brute));
            }
            verdicts.push_back(
                {name, "dual vs brute force", pass && gap <= 1e-2, gap, "max fixed-point gap"});
        }
    }

    bool all = true;
    for (const Verdict& v : verdicts) {
        std::printf("[%s] %-28s %s  %s %.3e\n", v.fixture.c_str(), v.property.c_str(),
                    v.pass ? "PASS" : "FAIL", v.note, v.measure);
        all = all && v.pass;
    }
    std::printf("%s\n", all ? "all properties hold" : "property failures detected");
    return all ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fputs(kUsage, stderr);
        return 1;
    }
    const std::string cmd = argv[1];
    if (cmd == "--help" || cmd == "-h" || cmd == "help") {
        std::fputs(kUsage, stdout);
        return 0;
    }
    try {
        const RunConfig cfg = parse_args(argc, argv);
        print_resolved(cfg);
        if (cmd == "gen-data") return cmd_gen_data(cfg);
        if (cmd == "train") return cmd_train(cfg);
        if (cmd == "eval") return cmd_eval(cfg);
        if (cmd == "attack") return cmd_attack(cfg);
        if (cmd == "sweep") return cmd_sweep(cfg);
        if (cmd == "verify-tabular") return cmd_verify_tabular(cfg);
        std::fprintf(stderr, "error: unknown command '%s'\n\n%s", cmd.c_str(), kUsage);
        return 1;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
