#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "agent.hpp"
#include "attacks.hpp"
#include "common.hpp"
#include "dataset.hpp"
#include "pendulum.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace micro {

/// Knobs for the online behavior-policy run that seeds every dataset tier.
/// The agent sub-config is plain soft actor-critic; its penalty weight is
/// forced to zero because the behavior run never touches a learned model.
struct DatagenConfig {
    AgentConfig agent;
    size_t online_steps = 30000;
    size_t warmup_steps = 1000;  // uniform-random actions before updates begin
    size_t snapshot_interval = 1000;
    size_t episode_horizon = 200;
    size_t eval_episodes = 10;
    size_t eval_horizon = 200;
    // Normalized score (random-policy return = 0, final return = 100) at
    // which the run's midpoint policy is snapped.
    double medium_score = 50.0;

    DatagenConfig() {
        agent.policy_hidden = {64, 64};
        agent.critic_hidden = {64, 64};
        agent.lr_policy = 3e-4;
        agent.batch = 128;
    }

    void validate() const {
        agent.validate();
        require_arg(online_steps > 0, "DatagenConfig: online_steps must be positive");
        require_arg(snapshot_interval > 0, "DatagenConfig: snapshot_interval must be positive");
        require_arg(episode_horizon > 0, "DatagenConfig: episode_horizon must be positive");
        require_arg(eval_episodes > 0 && eval_horizon > 0,
                    "DatagenConfig: evaluation shape must be positive");
        require_arg(medium_score > 0.0 && medium_score < 100.0,
                    "DatagenConfig: medium_score must lie in (0,100)");
    }
};

/// Everything the dataset tiers need from one behavior-training run.
struct BehaviorArtifacts {
    Policy medium, expert;
    double random_return = 0.0;
    double medium_return = 0.0;
    double expert_return = 0.0;
    size_t medium_step = 0;  // env transitions collected when `medium` was snapped
    std::vector<Transition> replay_log;  // every collected transition, in order
    std::vector<std::pair<size_t, double>> eval_curve;  // (step, mean return)
};

namespace detail {

inline std::vector<Transition> sample_log(const std::vector<Transition>& log, size_t batch,
                                          Rng& rng) {
    std::vector<Transition> rows;
    rows.reserve(batch);
    for (size_t i = 0; i < batch; ++i) rows.push_back(log[rng.raw64() % log.size()]);
    return rows;
}

inline Tensor one_obs_row(const Vec& obs) {
    Tensor o(1, obs.size());
    for (size_t j = 0; j < obs.size(); ++j) o.at(0, j) = obs[j];
    return o;
}

}  // namespace detail

/// Train a behavior policy online on the pendulum with plain soft
/// actor-critic and snapshot it along the way. The returned medium policy is
/// the earliest snapshot whose return crosses cfg.medium_score on the
/// normalized scale anchored at the untrained policy (0) and the final
/// policy (100); if the run never improves, both snapshots are the final
/// policy. Fully deterministic in (params, cfg, seed).
inline BehaviorArtifacts train_behavior(const PendulumParams& params, const DatagenConfig& cfg,
                                        uint64_t seed) {
    cfg.validate();
    AgentConfig acfg = cfg.agent;
    acfg.beta = 0.0;
    RngSet rngs(seed);
    const double tl = params.torque_limit;
    Agent ag = Agent::make(acfg, PendulumEnv::obs_dim, {-tl}, {tl}, rngs.agent);

    BehaviorArtifacts out;
    out.replay_log.reserve(cfg.online_steps);
    out.random_return =
        evaluate_policy(ag.policy, params, cfg.eval_episodes, cfg.eval_horizon, rngs.eval).mean;
    out.eval_curve.emplace_back(0, out.random_return);

    struct Snap {
        size_t step;
        double ret;
        Policy pol;
    };
    std::vector<Snap> snaps;

    PendulumEnv env(params);
    Vec obs = env.reset(rngs.rollout);
    size_t steps_in_episode = 0;
    const size_t update_from = std::max(cfg.warmup_steps, acfg.batch);

    for (size_t step = 1; step <= cfg.online_steps; ++step) {
        Vec a(PendulumEnv::act_dim);
        if (step <= cfg.warmup_steps) {
            for (double& x : a) x = rngs.agent.uniform(-tl, tl);
        } else {
            const Tensor act = ag.policy.sample(detail::one_obs_row(obs), rngs.agent).first;
            for (size_t j = 0; j < a.size(); ++j) a[j] = act.at(0, j);
        }
        const PendulumEnv::StepResult sr = env.step(a[0]);
        out.replay_log.push_back({obs, a, sr.reward, sr.obs, false, Source::Offline});
        obs = sr.obs;
        if (++steps_in_episode >= cfg.episode_horizon) {
            obs = env.reset(rngs.rollout);
            steps_in_episode = 0;
        }

        if (step >= update_from) {
            const std::vector<Transition> rows =
                detail::sample_log(out.replay_log, acfg.batch, rngs.agent);
            Tensor bo(rows.size(), PendulumEnv::obs_dim);
            for (size_t r = 0; r < rows.size(); ++r)
                for (size_t j = 0; j < PendulumEnv::obs_dim; ++j) bo.at(r, j) = rows[r].s[j];
            update_critics(ag, rows, nullptr, rngs.agent);
            update_policy(ag, bo, rngs.agent);
            update_alpha(ag, bo, rngs.agent);
            for (size_t i = 0; i < ag.critics.size(); ++i)
                soft_update(ag.targets[i], ag.critics[i], acfg.tau);
        }

        if (step % cfg.snapshot_interval == 0 || step == cfg.online_steps) {
            const double ret =
                evaluate_policy(ag.policy, params, cfg.eval_episodes, cfg.eval_horizon, rngs.eval)
                    .mean;
            snaps.push_back({step, ret, ag.policy});
            out.eval_curve.emplace_back(step, ret);
        }
    }

    const Snap& last = snaps.back();
    out.expert = last.pol;
    out.expert_return = last.ret;
    out.medium = last.pol;
    out.medium_return = last.ret;
    out.medium_step = last.step;
    if (out.expert_return > out.random_return) {
        const ScoreRefs refs{out.random_return, out.expert_return};
        for (const Snap& s : snaps) {
            if (normalized_score(s.ret, refs) >= cfg.medium_score) {
                out.medium = s.pol;
                out.medium_return = s.ret;
                out.medium_step = s.step;
                break;
            }
        }
    }
    return out;
}

/// Stochastic rollouts of a fixed policy: episodes of `horizon` steps,
/// resetting in between, truncated to exactly n transitions. Episode ends
/// are time limits, not terminals, so every row has done = false.
inline std::vector<Transition> policy_rollout_data(const Policy& pol, const PendulumParams& params,
                                                   size_t n, size_t horizon, Rng& rng) {
    require_arg(n > 0, "policy_rollout_data: need a positive transition count");
    require_arg(horizon > 0, "policy_rollout_data: need a positive horizon");
    require_arg(pol.obs_dim() == PendulumEnv::obs_dim && pol.act_dim() == PendulumEnv::act_dim,
                "policy_rollout_data: policy does not fit the pendulum");
    std::vector<Transition> rows;
    rows.reserve(n);
    PendulumEnv env(params);
    Vec obs = env.reset(rng);
    size_t steps_in_episode = 0;
    while (rows.size() < n) {
        const Tensor act = pol.sample(detail::one_obs_row(obs), rng).first;
        Vec a(PendulumEnv::act_dim);
        for (size_t j = 0; j < a.size(); ++j) a[j] = act.at(0, j);
        const PendulumEnv::StepResult sr = env.step(a[0]);
        rows.push_back({obs, a, sr.reward, sr.obs, false, Source::Offline});
        obs = sr.obs;
        if (++steps_in_episode >= horizon) {
            obs = env.reset(rng);
            steps_in_episode = 0;
        }
    }
    return rows;
}

/// Assemble one tier from an existing behavior run. Rollout tiers draw from
/// fixed named streams ("data-medium", "data-expert"), so the medium tier
/// and the medium half of medium-expert share a common prefix for the same
/// seed, and the expert half can be re-derived independently.
inline Dataset assemble_tier(const std::string& tier, size_t n, uint64_t seed,
                             const BehaviorArtifacts& run, const PendulumParams& params = {},
                             const DatagenConfig& cfg = {}) {
    require_arg(n > 0, "generate_dataset: need a positive transition count");
    Dataset ds;
    ds.env = "pendulum";
    ds.tier = tier;
    ds.seed = seed;
    ds.obs_dim = PendulumEnv::obs_dim;
    ds.act_dim = PendulumEnv::act_dim;

    if (tier == "medium") {
        Rng rng(seed, "data-medium");
        ds.rows = policy_rollout_data(run.medium, params, n, cfg.episode_horizon, rng);
    } else if (tier == "medium-replay") {
        require_arg(n <= run.medium_step,
                    "generate_dataset: medium-replay holds only " +
                        std::to_string(run.medium_step) +
                        " transitions for this seed; lower n or raise online_steps");
        ds.rows.assign(run.replay_log.begin(),
                       run.replay_log.begin() + static_cast<std::ptrdiff_t>(n));
    } else if (tier == "medium-expert") {
        require_arg(n % 2 == 0, "generate_dataset: medium-expert needs an even transition count");
        Rng rm(seed, "data-medium");
        Rng re(seed, "data-expert");
        ds.rows = policy_rollout_data(run.medium, params, n / 2, cfg.episode_horizon, rm);
        const std::vector<Transition> ex =
            policy_rollout_data(run.expert, params, n / 2, cfg.episode_horizon, re);
        ds.rows.insert(ds.rows.end(), ex.begin(), ex.end());
    } else {
        throw std::invalid_argument("generate_dataset: unknown tier '" + tier + "'");
    }
    return ds;
}

/// Build one offline dataset tier from scratch. Each tier derives from a
/// single behavior-training run keyed by seed, so the same (tier, n, seed,
/// params, cfg) always produces identical data:
///   medium         first n transitions of stochastic medium-policy rollouts
///   medium-replay  first n transitions of the behavior run's replay buffer,
///                  truncated where the medium policy was snapped
///   medium-expert  n/2 medium rollouts followed by n/2 expert rollouts
inline Dataset generate_dataset(const std::string& tier, size_t n, uint64_t seed,
                                const PendulumParams& params = {}, const DatagenConfig& cfg = {}) {
    require_arg(n > 0, "generate_dataset: need a positive transition count");
    require_arg(tier == "medium" || tier == "medium-replay" || tier == "medium-expert",
                "generate_dataset: unknown tier '" + tier + "'");
    return assemble_tier(tier, n, seed, train_behavior(params, cfg, seed), params, cfg);
}

}  // namespace micro
