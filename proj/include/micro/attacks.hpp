#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "agent.hpp"
#include "common.hpp"
#include "pendulum.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace micro {

enum class AttackKind { RA, AD, MQ };

/// Observation attack: a perturbation radius in normalized observation
/// units plus the zeroth-order search budget for the scored variants.
struct AttackSpec {
    AttackKind kind = AttackKind::RA;
    double eps = 0.0;
    size_t n_candidates = 30;
    uint64_t seed = 0;

    void validate() const {
        require_arg(eps >= 0.0, "AttackSpec: eps must be >= 0");
        require_arg(n_candidates >= 1, "AttackSpec: need at least one candidate");
    }
};

namespace detail {

inline void check_attack_dims(const Vec& s, const Vec& scale) {
    require_arg(!s.empty(), "attack: empty state");
    require_arg(scale.size() == s.size(), "attack: scale arity mismatch");
    for (double x : scale) require_arg(x > 0.0, "attack: scale entries must be positive");
}

/// One uniform draw from the L-inf ball of radius eps (normalized units),
/// one draw per dimension in index order.
inline Vec ball_sample(const Vec& s, double eps, Rng& rng, const Vec& scale) {
    Vec out = s;
    for (size_t j = 0; j < s.size(); ++j) out[j] = s[j] + scale[j] * rng.uniform(-eps, eps);
    return out;
}

inline Tensor one_row(const Vec& s) {
    Tensor t(1, s.size());
    for (size_t j = 0; j < s.size(); ++j) t.at(0, j) = s[j];
    return t;
}

}  // namespace detail

/// Random attack: a single uniform sample from the ball around s. eps = 0
/// returns s itself without consuming the stream.
inline Vec attack_ra(const Vec& s, double eps, Rng& rng, const Vec& scale) {
    detail::check_attack_dims(s, scale);
    require_arg(eps >= 0.0, "attack_ra: eps must be >= 0");
    if (eps == 0.0) return s;
    return detail::ball_sample(s, eps, rng, scale);
}

/// Jeffreys divergence (symmetrized KL) between the policy's diagonal
/// Gaussian heads at two states, before squashing. Zero iff the heads agree.
inline double jeffreys_gap(const Policy& pol, const Vec& a, const Vec& b) {
    pol.check();
    require_arg(a.size() == pol.obs_dim() && b.size() == pol.obs_dim(),
                "jeffreys_gap: state arity mismatch");
    const auto [mu_a, sig_a] = pol.gaussian_head(detail::one_row(a));
    const auto [mu_b, sig_b] = pol.gaussian_head(detail::one_row(b));
    double total = 0.0;
    for (size_t j = 0; j < pol.act_dim(); ++j) {
        const double va = sig_a.at(0, j) * sig_a.at(0, j);
        const double vb = sig_b.at(0, j) * sig_b.at(0, j);
        const double d = mu_a.at(0, j) - mu_b.at(0, j);
        total += (va + d * d) / (2.0 * vb) + (vb + d * d) / (2.0 * va) - 1.0;
    }
    return total;
}

/// Action-distribution attack: s plus n_candidates ball samples, scored by
/// the Jeffreys divergence against the clean head; the most-diverging
/// candidate wins and ties keep the earlier candidate (s first).
inline Vec attack_ad(const Vec& s, const Policy& pol, double eps, size_t n_candidates, Rng& rng,
                     const Vec& scale) {
    detail::check_attack_dims(s, scale);
    require_arg(eps >= 0.0, "attack_ad: eps must be >= 0");
    require_arg(n_candidates >= 1, "attack_ad: need at least one candidate");
    require_arg(s.size() == pol.obs_dim(), "attack_ad: state arity mismatch");
    if (eps == 0.0) return s;
    Vec best = s;
    double best_gap = 0.0;  // the gap of s against itself
    for (size_t c = 0; c < n_candidates; ++c) {
        Vec cand = detail::ball_sample(s, eps, rng, scale);
        const double gap = jeffreys_gap(pol, s, cand);
        if (gap > best_gap) {
            best_gap = gap;
            best = std::move(cand);
        }
    }
    return best;
}

/// Value of the attacked step for the MQ objective: the min-over-critics Q
/// at the TRUE state, taking the action the policy would pick at the
/// (possibly perturbed) observed state.
inline double mq_value(const Policy& pol, const std::vector<Mlp>& critics, const Vec& s_true,
                       const Vec& s_obs) {
    pol.check();
    require_arg(!critics.empty(), "mq_value: need at least one critic");
    require_arg(s_true.size() == pol.obs_dim() && s_obs.size() == pol.obs_dim(),
                "mq_value: state arity mismatch");
    const Tensor act = pol.act_deterministic(detail::one_row(s_obs));
    Tensor sa(1, s_true.size() + pol.act_dim());
    for (size_t j = 0; j < s_true.size(); ++j) sa.at(0, j) = s_true[j];
    for (size_t j = 0; j < pol.act_dim(); ++j) sa.at(0, s_true.size() + j) = act.at(0, j);
    double q = critics[0].forward_plain(sa).item();
    for (size_t i = 1; i < critics.size(); ++i)
        q = std::min(q, critics[i].forward_plain(sa).item());
    return q;
}

/// Min-Q attack: candidate set as in attack_ad, scored by mq_value; the
/// value-minimizing candidate wins and ties keep the earlier one.
inline Vec attack_mq(const Vec& s, const Policy& pol, const std::vector<Mlp>& critics, double eps,
                     size_t n_candidates, Rng& rng, const Vec& scale) {
    detail::check_attack_dims(s, scale);
    require_arg(eps >= 0.0, "attack_mq: eps must be >= 0");
    require_arg(n_candidates >= 1, "attack_mq: need at least one candidate");
    if (eps == 0.0) return s;
    Vec best = s;
    double best_q = mq_value(pol, critics, s, s);
    for (size_t c = 0; c < n_candidates; ++c) {
        Vec cand = detail::ball_sample(s, eps, rng, scale);
        const double q = mq_value(pol, critics, s, cand);
        if (q < best_q) {
            best_q = q;
            best = std::move(cand);
        }
    }
    return best;
}

/// Dispatch one observation attack. critics may be empty except for MQ.
inline Vec apply_attack(const Vec& s, const AttackSpec& spec, const Policy& pol,
                        const std::vector<Mlp>& critics, Rng& rng, const Vec& scale) {
    spec.validate();
    switch (spec.kind) {
        case AttackKind::RA:
            return attack_ra(s, spec.eps, rng, scale);
        case AttackKind::AD:
            return attack_ad(s, pol, spec.eps, spec.n_candidates, rng, scale);
        case AttackKind::MQ:
            return attack_mq(s, pol, critics, spec.eps, spec.n_candidates, rng, scale);
    }
    throw std::invalid_argument("apply_attack: unknown attack kind");
}

/// Attacked evaluation: the agent acts on the perturbed observation while
/// the environment transitions on the true state. Episode starts draw from
/// the "eval" stream of spec.seed and perturbations from "attack", so eps=0
/// reproduces clean evaluation exactly.
inline EvalStats evaluate_under_attack(const Policy& pol, const std::vector<Mlp>& critics,
                                       const PendulumParams& params, const AttackSpec& spec,
                                       size_t episodes, size_t horizon, const Vec& scale) {
    pol.check();
    spec.validate();
    require_arg(pol.obs_dim() == PendulumEnv::obs_dim && pol.act_dim() == PendulumEnv::act_dim,
                "evaluate_under_attack: policy does not fit the pendulum");
    require_arg(episodes > 0 && horizon > 0, "evaluate_under_attack: need episodes and a horizon");
    detail::check_attack_dims(Vec(pol.obs_dim(), 0.0), scale);
    if (spec.kind == AttackKind::MQ)
        require_arg(!critics.empty(), "evaluate_under_attack: MQ needs critics");

    PendulumEnv env(params);
    Rng eval_rng(spec.seed, "eval");
    Rng atk_rng(spec.seed, "attack");
    Vec returns;
    for (size_t e = 0; e < episodes; ++e) {
        Vec obs = env.reset(eval_rng);
        double ret = 0.0;
        for (size_t k = 0; k < horizon; ++k) {
            const Vec seen = apply_attack(obs, spec, pol, critics, atk_rng, scale);
            const Tensor a = pol.act_deterministic(detail::one_row(seen));
            const PendulumEnv::StepResult sr = env.step(a.at(0, 0));
            ret += sr.reward;
            obs = sr.obs;
        }
        returns.push_back(ret);
    }
    double m = 0.0;
    for (double r : returns) m += r;
    m /= static_cast<double>(returns.size());
    double v = 0.0;
    for (double r : returns) v += (r - m) * (r - m);
    v /= static_cast<double>(returns.size());
    return {m, std::sqrt(std::max(v, 0.0))};
}

/// Gravity and friction multiplier axes for the perturbation sweep; the
/// nominal point (1, 1) must be present so the heatmap has a clean anchor.
struct SweepGrid {
    Vec gravity{1.0};
    Vec friction{1.0};

    void validate() const {
        require_arg(!gravity.empty() && !friction.empty(), "SweepGrid: empty axis");
        for (double g : gravity) require_arg(g > 0.0, "SweepGrid: multipliers must be positive");
        for (double f : friction) require_arg(f > 0.0, "SweepGrid: multipliers must be positive");
        const bool has_g = std::find(gravity.begin(), gravity.end(), 1.0) != gravity.end();
        const bool has_f = std::find(friction.begin(), friction.end(), 1.0) != friction.end();
        require_arg(has_g && has_f, "SweepGrid: grid must include the nominal point (1, 1)");
    }
};

/// Mean return per (gravity, friction) cell; rows follow the gravity axis,
/// columns the friction axis. Every cell restarts the "eval" stream of
/// seed, so the nominal cell equals standalone clean evaluation.
inline Tensor sweep_env_params(const Policy& pol, const PendulumParams& base,
                               const SweepGrid& grid, size_t episodes, size_t horizon,
                               uint64_t seed) {
    grid.validate();
    Tensor out(grid.gravity.size(), grid.friction.size());
    for (size_t gi = 0; gi < grid.gravity.size(); ++gi)
        for (size_t fi = 0; fi < grid.friction.size(); ++fi) {
            Rng rng(seed, "eval");
            const PendulumParams p = base.scaled(grid.gravity[gi], grid.friction[fi]);
            out.at(gi, fi) = evaluate_policy(pol, p, episodes, horizon, rng).mean;
        }
    return out;
}

/// Reference returns anchoring the normalized score.
struct ScoreRefs {
    double random_return = 0.0;
    double expert_return = 0.0;

    void validate() const {
        require_arg(expert_return > random_return,
                    "ScoreRefs: expert return must exceed the random return");
    }
};

/// Linear rescaling where the random reference maps to 0 and the expert
/// reference to 100; values outside [0, 100] are legitimate.
inline double normalized_score(double mean_return, const ScoreRefs& refs) {
    refs.validate();
    return (mean_return - refs.random_return) / (refs.expert_return - refs.random_return) * 100.0;
}

}  // namespace micro
