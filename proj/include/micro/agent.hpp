#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "checkpoint.hpp"
#include "common.hpp"
#include "dynamics.hpp"
#include "nn.hpp"
#include "penalty.hpp"
#include "pendulum.hpp"
#include "replay.hpp"
#include "rng.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace micro {

/// Soft actor-critic hyperparameters plus the offline-training knobs that
/// surround it (penalty weight, batch mix, rollout cadence).
struct AgentConfig {
    std::vector<size_t> policy_hidden{256, 256};
    std::vector<size_t> critic_hidden{256, 256};
    double lr_policy = 1e-4;
    double lr_critic = 3e-4;
    double lr_alpha = 3e-4;
    size_t batch = 256;
    double gamma = 0.99;
    double tau = 5e-3;        // per-step Polyak coefficient for the targets
    size_t n_critics = 2;
    double init_log_alpha = 0.0;
    // NaN selects the default of -act_dim.
    double target_entropy = std::numeric_limits<double>::quiet_NaN();
    double beta = 0.5;            // penalty coefficient on model rows
    double real_fraction = 0.95;  // offline share of every update batch
    size_t rollout_interval = 1000;
    size_t rollout_batch = 512;
    size_t rollout_horizon = 5;
    size_t model_buffer_capacity = 100000;
    uint64_t n_iter = 100000;
    uint64_t eval_interval = 1000;  // 0 disables the metrics stream
    size_t eval_episodes = 10;
    size_t eval_horizon = 200;
    double log_sig_lo = -20.0;
    double log_sig_hi = 2.0;

    void validate() const {
        require_arg(lr_policy > 0.0 && lr_critic > 0.0 && lr_alpha > 0.0,
                    "AgentConfig: learning rates must be positive");
        require_arg(batch > 0, "AgentConfig: batch must be positive");
        require_arg(gamma > 0.0 && gamma < 1.0, "AgentConfig: gamma must lie in (0,1)");
        require_arg(tau > 0.0 && tau <= 1.0, "AgentConfig: tau must lie in (0,1]");
        require_arg(n_critics >= 2, "AgentConfig: need at least two critics");
        require_arg(beta >= 0.0, "AgentConfig: beta must be >= 0");
        require_arg(real_fraction >= 0.0 && real_fraction <= 1.0,
                    "AgentConfig: real_fraction must lie in [0,1]");
        require_arg(rollout_interval > 0, "AgentConfig: rollout_interval must be positive");
        require_arg(rollout_batch > 0 && rollout_horizon > 0,
                    "AgentConfig: rollout shape must be positive");
        require_arg(model_buffer_capacity > 0, "AgentConfig: model buffer must have capacity");
        require_arg(eval_episodes > 0 && eval_horizon > 0,
                    "AgentConfig: evaluation shape must be positive");
        require_arg(log_sig_lo < log_sig_hi, "AgentConfig: bad log-sigma clamp");
    }
};

/// Squashed-Gaussian policy: the net maps obs -> [mu | log_sigma] and actions
/// are c + h*tanh(mu + sigma*eps) per dimension, with c and h the center and
/// half-width of the action box.
struct Policy {
    Mlp net;
    Vec act_lo, act_hi;
    double log_sig_lo = -20.0, log_sig_hi = 2.0;

    size_t obs_dim() const { return net.in_dim(); }
    size_t act_dim() const { return act_lo.size(); }

    void check() const {
        require_arg(!act_lo.empty() && act_lo.size() == act_hi.size(),
                    "Policy: bad action bounds");
        for (size_t j = 0; j < act_lo.size(); ++j)
            require_arg(act_lo[j] < act_hi[j], "Policy: act_lo must be < act_hi");
        require_arg(net.out_dim() == 2 * act_dim(), "Policy: net must emit [mu | log_sigma]");
        require_arg(log_sig_lo < log_sig_hi, "Policy: bad log-sigma clamp");
    }

    /// One stochastic draw per row; noise is consumed row-major (rows outer,
    /// action dims inner). Returns actions [n, da] and log-probs [n, 1]; the
    /// log-prob includes the tanh-and-rescale change of variables.
    std::pair<Tensor, Tensor> sample(const Tensor& obs, Rng& rng) const {
        const Tensor head = net.forward_plain(obs);
        const size_t n = obs.rows, da = act_dim();
        Tensor act(n, da), logp(n, 1);
        for (size_t r = 0; r < n; ++r) {
            double lp = 0.0;
            for (size_t j = 0; j < da; ++j) {
                const double c = 0.5 * (act_hi[j] + act_lo[j]);
                const double h = 0.5 * (act_hi[j] - act_lo[j]);
                const double mu = head.at(r, j);
                const double ls = std::clamp(head.at(r, da + j), log_sig_lo, log_sig_hi);
                const double eps = rng.normal();
                const double u = mu + std::exp(ls) * eps;
                act.at(r, j) = c + h * std::tanh(u);
                const double sp = std::max(-2.0 * u, 0.0) + std::log1p(std::exp(-std::abs(2.0 * u)));
                lp += -0.5 * eps * eps - ls - 0.5 * std::log(2.0 * kPi) - std::log(h)
                      - 2.0 * (std::log(2.0) - u - sp);
            }
            logp.at(r, 0) = lp;
        }
        return {std::move(act), std::move(logp)};
    }

    /// The clamped Gaussian head before squashing: mu [n, da], sigma [n, da].
    std::pair<Tensor, Tensor> gaussian_head(const Tensor& obs) const {
        const Tensor head = net.forward_plain(obs);
        const size_t da = act_dim();
        Tensor mu(obs.rows, da), sig(obs.rows, da);
        for (size_t r = 0; r < obs.rows; ++r)
            for (size_t j = 0; j < da; ++j) {
                mu.at(r, j) = head.at(r, j);
                sig.at(r, j) = std::exp(std::clamp(head.at(r, da + j), log_sig_lo, log_sig_hi));
            }
        return {std::move(mu), std::move(sig)};
    }

    /// Deterministic head: tanh of the Gaussian mean, rescaled to the box.
    Tensor act_deterministic(const Tensor& obs) const {
        const Tensor head = net.forward_plain(obs);
        const size_t da = act_dim();
        Tensor act(obs.rows, da);
        for (size_t r = 0; r < obs.rows; ++r)
            for (size_t j = 0; j < da; ++j) {
                const double c = 0.5 * (act_hi[j] + act_lo[j]);
                const double h = 0.5 * (act_hi[j] - act_lo[j]);
                act.at(r, j) = c + h * std::tanh(head.at(r, j));
            }
        return act;
    }
};

namespace detail {

struct PolicyLossNodes {
    Tape::NodeId action;  // [n, da]
    Tape::NodeId logp;    // [n, 1]
    Tape::NodeId loss;    // scalar: mean over rows of alpha*logp - min_i Q_i(s, a)
};

/// Build the reparameterized policy loss on a tape. The critics are staged as
/// constants so backward skips their weight gradients; eps is the pre-drawn
/// noise, one value per action dimension.
inline PolicyLossNodes policy_loss_node(Tape& t, const Policy& pol, const Mlp::Staged& pst,
                                        const std::vector<Mlp>& critics, const Tensor& obs,
                                        const Tensor& eps, double alpha) {
    pol.check();
    require_arg(obs.rows > 0 && obs.cols == pol.obs_dim(), "policy_loss_node: bad obs shape");
    require_arg(eps.rows == obs.rows && eps.cols == pol.act_dim(),
                "policy_loss_node: bad eps shape");
    require_arg(!critics.empty(), "policy_loss_node: need at least one critic");
    const size_t n = obs.rows, da = pol.act_dim();

    const Tape::NodeId obs_in = t.input(obs);
    const Tape::NodeId head = pol.net.forward(t, pst, obs_in);
    const Tape::NodeId mu = t.slice_cols(head, 0, da);
    const Tape::NodeId ls =
        t.clamp(t.slice_cols(head, da, 2 * da), pol.log_sig_lo, pol.log_sig_hi);
    const Tape::NodeId u = t.add(mu, t.mul(t.exp(ls), t.input(eps)));

    // Everything in the per-dimension log-prob that does not depend on the
    // parameters is folded into one constant matrix.
    Tensor cst(n, da), half(n, da), center(n, da);
    for (size_t r = 0; r < n; ++r)
        for (size_t j = 0; j < da; ++j) {
            const double h = 0.5 * (pol.act_hi[j] - pol.act_lo[j]);
            const double e = eps.at(r, j);
            cst.at(r, j) =
                -0.5 * e * e - 0.5 * std::log(2.0 * kPi) - std::log(h) - 2.0 * std::log(2.0);
            half.at(r, j) = h;
            center.at(r, j) = 0.5 * (pol.act_hi[j] + pol.act_lo[j]);
        }
    const Tape::NodeId per_dim =
        t.add(t.sub(t.input(std::move(cst)), ls),
              t.add(t.scale(u, 2.0), t.scale(t.softplus(t.scale(u, -2.0)), 2.0)));
    const Tape::NodeId logp = t.sum_cols(per_dim);
    const Tape::NodeId action =
        t.add(t.mul(t.tanh(u), t.input(std::move(half))), t.input(std::move(center)));

    const Tape::NodeId sa = t.concat_cols(obs_in, action);
    Tape::NodeId qmin{};
    for (size_t i = 0; i < critics.size(); ++i) {
        const Mlp::Staged frozen = critics[i].stage(t, false);
        const Tape::NodeId qi = critics[i].forward(t, frozen, sa);
        qmin = i == 0 ? qi : t.minimum(qmin, qi);
    }
    const Tape::NodeId loss =
        t.scale(t.sum_all(t.sub(t.scale(logp, alpha), qmin)), 1.0 / static_cast<double>(n));
    return {action, logp, loss};
}

/// Mean squared error between the critic's output on sa and the fixed
/// targets y.
inline Tape::NodeId critic_loss_node(Tape& t, const Mlp& critic, const Mlp::Staged& st,
                                     const Tensor& sa, const Tensor& y) {
    require_arg(sa.rows > 0 && y.rows == sa.rows && y.cols == 1,
                "critic_loss_node: bad shapes");
    const Tape::NodeId q = critic.forward(t, st, t.input(sa));
    return t.scale(t.sum_all(t.square(t.sub(q, t.input(y)))),
                   1.0 / static_cast<double>(sa.rows));
}

}  // namespace detail

/// Actor, critic pairs with targets, optimizer states, and the entropy
/// temperature. `step` counts completed training iterations.
struct Agent {
    AgentConfig cfg;
    Policy policy;
    std::vector<Mlp> critics, targets;
    MlpAdam policy_opt;
    std::vector<MlpAdam> critic_opts;
    Tensor log_alpha{1, 1};
    AdamState alpha_opt{1, 1};
    double target_entropy = 0.0;
    uint64_t step = 0;

    double alpha() const { return std::exp(log_alpha.at(0, 0)); }

    /// Networks are drawn from rng in a fixed order: policy first, then
    /// critics by index. Targets start as copies of the critics.
    static Agent make(const AgentConfig& cfg, size_t obs_dim, Vec act_lo, Vec act_hi, Rng& rng) {
        cfg.validate();
        require_arg(obs_dim > 0, "Agent::make: obs_dim must be positive");
        require_arg(!act_lo.empty() && act_lo.size() == act_hi.size(),
                    "Agent::make: bad action bounds");
        const size_t da = act_lo.size();

        Agent ag;
        ag.cfg = cfg;
        std::vector<size_t> pdims{obs_dim};
        pdims.insert(pdims.end(), cfg.policy_hidden.begin(), cfg.policy_hidden.end());
        pdims.push_back(2 * da);
        ag.policy.net = Mlp::make(pdims, Act::Relu, rng);
        ag.policy.act_lo = std::move(act_lo);
        ag.policy.act_hi = std::move(act_hi);
        ag.policy.log_sig_lo = cfg.log_sig_lo;
        ag.policy.log_sig_hi = cfg.log_sig_hi;
        ag.policy.check();
        ag.policy_opt = MlpAdam(ag.policy.net);

        std::vector<size_t> qdims{obs_dim + da};
        qdims.insert(qdims.end(), cfg.critic_hidden.begin(), cfg.critic_hidden.end());
        qdims.push_back(1);
        for (size_t i = 0; i < cfg.n_critics; ++i) {
            ag.critics.push_back(Mlp::make(qdims, Act::Relu, rng));
            ag.critic_opts.emplace_back(ag.critics.back());
        }
        ag.targets = ag.critics;

        ag.log_alpha.at(0, 0) = cfg.init_log_alpha;
        ag.target_entropy =
            std::isnan(cfg.target_entropy) ? -static_cast<double>(da) : cfg.target_entropy;
        return ag;
    }

    /// Elementwise min over the target critics: (obs, act) -> [n, 1].
    Tensor min_target_q(const Tensor& obs, const Tensor& act) const {
        require(!targets.empty(), "Agent: no target critics");
        const Tensor sa = hstack(obs, act);
        Tensor best = targets[0].forward_plain(sa);
        for (size_t i = 1; i < targets.size(); ++i) {
            const Tensor qi = targets[i].forward_plain(sa);
            for (size_t k = 0; k < best.data.size(); ++k)
                best.data[k] = std::min(best.data[k], qi.data[k]);
        }
        return best;
    }
};

/// One gradient step on every critic against the shared target vector. The
/// only randomness is the target's policy draws (see critic_target). Returns
/// the mean squared-error loss across critics.
inline double update_critics(Agent& ag, const std::vector<Transition>& batch,
                             const GaussianEnsemble* ens, Rng& rng,
                             TargetStats* stats = nullptr) {
    require_arg(!batch.empty(), "update_critics: empty batch");
    const QMin qmin = [&ag](const Tensor& o, const Tensor& a) { return ag.min_target_q(o, a); };
    const PolicySample ps = [&ag](const Tensor& o, Rng& r) { return ag.policy.sample(o, r); };
    PenaltyConfig pcfg;
    pcfg.beta = ag.cfg.beta;
    const Vec y =
        critic_target(batch, qmin, ps, ens, ag.alpha(), ag.cfg.gamma, pcfg, rng, stats);

    const size_t n = batch.size();
    const size_t ds = batch[0].s.size(), da = batch[0].a.size();
    Tensor sa(n, ds + da), yt(n, 1);
    for (size_t r = 0; r < n; ++r) {
        for (size_t j = 0; j < ds; ++j) sa.at(r, j) = batch[r].s[j];
        for (size_t j = 0; j < da; ++j) sa.at(r, ds + j) = batch[r].a[j];
        yt.at(r, 0) = y[r];
    }

    double total = 0.0;
    for (size_t i = 0; i < ag.critics.size(); ++i) {
        Tape t;
        const Mlp::Staged st = ag.critics[i].stage(t, true);
        const Tape::NodeId loss = detail::critic_loss_node(t, ag.critics[i], st, sa, yt);
        const double lv = t.value(loss).item();
        require(std::isfinite(lv), "update_critics: non-finite loss");
        t.backward(loss);
        ag.critic_opts[i].apply(ag.critics[i], t, st, ag.cfg.lr_critic);
        total += lv;
    }
    return total / static_cast<double>(ag.critics.size());
}

/// One reparameterized gradient step on the policy against the current
/// online critics. Consumes obs.rows * act_dim normal draws, row-major,
/// exactly like Policy::sample. Returns the loss value.
inline double update_policy(Agent& ag, const Tensor& obs, Rng& rng) {
    require_arg(obs.rows > 0 && obs.cols == ag.policy.obs_dim(), "update_policy: bad obs shape");
    Tensor eps(obs.rows, ag.policy.act_dim());
    for (double& x : eps.data) x = rng.normal();
    Tape t;
    const Mlp::Staged pst = ag.policy.net.stage(t, true);
    const detail::PolicyLossNodes nodes =
        detail::policy_loss_node(t, ag.policy, pst, ag.critics, obs, eps, ag.alpha());
    const double lv = t.value(nodes.loss).item();
    require(std::isfinite(lv), "update_policy: non-finite loss");
    t.backward(nodes.loss);
    ag.policy_opt.apply(ag.policy.net, t, pst, ag.cfg.lr_policy);
    return lv;
}

/// Temperature step with the closed-form gradient
/// dL/dlog_alpha = -alpha * (E[log pi] + target_entropy), estimated from one
/// fresh policy draw per row. Returns the updated alpha.
inline double update_alpha(Agent& ag, const Tensor& obs, Rng& rng) {
    require_arg(obs.rows > 0 && obs.cols == ag.policy.obs_dim(), "update_alpha: bad obs shape");
    const std::pair<Tensor, Tensor> draw = ag.policy.sample(obs, rng);
    const Tensor& logp = draw.second;
    double mean_lp = 0.0;
    for (size_t r = 0; r < logp.rows; ++r) mean_lp += logp.at(r, 0);
    mean_lp /= static_cast<double>(logp.rows);
    Tensor g(1, 1);
    g.at(0, 0) = -ag.alpha() * (mean_lp + ag.target_entropy);
    ag.alpha_opt.update(ag.log_alpha, g, ag.cfg.lr_alpha);
    return ag.alpha();
}

struct EvalStats {
    double mean = 0.0;
    double stddev = 0.0;  // population, over episodes
};

/// Roll fixed-length deterministic episodes (tanh of the Gaussian mean);
/// only the episode starts consume rng.
inline EvalStats evaluate_policy(const Policy& pol, const PendulumParams& params,
                                 size_t episodes, size_t horizon, Rng& rng) {
    pol.check();
    require_arg(pol.obs_dim() == PendulumEnv::obs_dim && pol.act_dim() == PendulumEnv::act_dim,
                "evaluate_policy: policy does not fit the pendulum");
    require_arg(episodes > 0 && horizon > 0, "evaluate_policy: need episodes and a horizon");
    PendulumEnv env(params);
    Vec returns;
    for (size_t e = 0; e < episodes; ++e) {
        Vec obs = env.reset(rng);
        double ret = 0.0;
        for (size_t k = 0; k < horizon; ++k) {
            Tensor o(1, obs.size());
            for (size_t j = 0; j < obs.size(); ++j) o.at(0, j) = obs[j];
            const Tensor a = pol.act_deterministic(o);
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

/// Serialize everything needed to act and to keep training under "agent/".
inline void save_agent(Checkpoint& ck, const Agent& ag) {
    ck.put_count("agent/n_critics", ag.critics.size());
    ck.put_count("agent/step", ag.step);
    ck.put_mlp("agent/policy/net", ag.policy.net);
    ck.put_adam("agent/policy/adam", ag.policy_opt);
    const size_t da = ag.policy.act_dim();
    Tensor lo(1, da), hi(1, da);
    for (size_t j = 0; j < da; ++j) {
        lo.at(0, j) = ag.policy.act_lo[j];
        hi.at(0, j) = ag.policy.act_hi[j];
    }
    ck.put("agent/act_lo", lo);
    ck.put("agent/act_hi", hi);
    ck.put_scalar("agent/log_sig_lo", ag.policy.log_sig_lo);
    ck.put_scalar("agent/log_sig_hi", ag.policy.log_sig_hi);
    ck.put_scalar("agent/target_entropy", ag.target_entropy);
    ck.put("agent/log_alpha", ag.log_alpha);
    ck.put("agent/alpha_adam_m", ag.alpha_opt.m);
    ck.put("agent/alpha_adam_v", ag.alpha_opt.v);
    ck.put_count("agent/alpha_adam_step", ag.alpha_opt.step);
    for (size_t i = 0; i < ag.critics.size(); ++i) {
        const std::string k = std::to_string(i);
        ck.put_mlp("agent/critic" + k + "/net", ag.critics[i]);
        ck.put_mlp("agent/critic" + k + "/target", ag.targets[i]);
        ck.put_adam("agent/critic" + k + "/adam", ag.critic_opts[i]);
    }
}

inline Agent load_agent(const Checkpoint& ck, const AgentConfig& cfg) {
    cfg.validate();
    Agent ag;
    ag.cfg = cfg;
    const uint64_t k = ck.count("agent/n_critics");
    require_arg(k == cfg.n_critics, "load_agent: critic count disagrees with the config");
    ag.step = ck.count("agent/step");
    ag.policy.net = ck.mlp("agent/policy/net");
    ag.policy_opt = ck.adam("agent/policy/adam");
    const Tensor lo = ck.tensor("agent/act_lo");
    const Tensor hi = ck.tensor("agent/act_hi");
    require_arg(lo.rows == 1 && hi.rows == 1 && lo.cols == hi.cols,
                "load_agent: bad action bounds");
    ag.policy.act_lo.assign(lo.data.begin(), lo.data.end());
    ag.policy.act_hi.assign(hi.data.begin(), hi.data.end());
    ag.policy.log_sig_lo = ck.scalar("agent/log_sig_lo");
    ag.policy.log_sig_hi = ck.scalar("agent/log_sig_hi");
    ag.policy.check();
    ag.target_entropy = ck.scalar("agent/target_entropy");
    ag.log_alpha = ck.tensor("agent/log_alpha");
    require_arg(ag.log_alpha.rows == 1 && ag.log_alpha.cols == 1,
                "load_agent: bad log_alpha record");
    ag.alpha_opt = AdamState(1, 1);
    ag.alpha_opt.m = ck.tensor("agent/alpha_adam_m");
    ag.alpha_opt.v = ck.tensor("agent/alpha_adam_v");
    ag.alpha_opt.step = ck.count("agent/alpha_adam_step");
    for (uint64_t i = 0; i < k; ++i) {
        const std::string s = std::to_string(i);
        ag.critics.push_back(ck.mlp("agent/critic" + s + "/net"));
        ag.targets.push_back(ck.mlp("agent/critic" + s + "/target"));
        ag.critic_opts.push_back(ck.adam("agent/critic" + s + "/adam"));
    }
    return ag;
}

/// Full training state: the agent plus the rng streams and the model buffer,
/// so a resumed run continues bit-identically.
inline void save_train_state(const std::string& path, const Agent& ag, const MixedBuffer& buf,
                             const RngSet& rngs) {
    Checkpoint ck;
    save_agent(ck, ag);
    ck.put_rng("train/rng_model", rngs.model);
    ck.put_rng("train/rng_agent", rngs.agent);
    ck.put_rng("train/rng_rollout", rngs.rollout);
    ck.put_rng("train/rng_eval", rngs.eval);
    ck.put_rng("train/rng_attack", rngs.attack);
    const std::vector<Transition>& rows = buf.model_rows();
    const size_t ds = ag.policy.obs_dim(), da = ag.policy.act_dim();
    Tensor packed(rows.size(), 2 * ds + da + 2);
    for (size_t r = 0; r < rows.size(); ++r) {
        size_t c = 0;
        for (double x : rows[r].s) packed.at(r, c++) = x;
        for (double x : rows[r].a) packed.at(r, c++) = x;
        packed.at(r, c++) = rows[r].r;
        for (double x : rows[r].s2) packed.at(r, c++) = x;
        packed.at(r, c++) = rows[r].done ? 1.0 : 0.0;
    }
    ck.put("train/model_rows", packed);
    ck.put_count("train/model_write", buf.write_cursor());
    ck.save(path);
}

namespace detail {

inline void json_num(std::ostream& os, const char* key, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << ",\"" << key << "\":" << buf;
}

inline void write_metrics_row(std::ostream& os, uint64_t step, double critic_loss,
                              double policy_loss, double alpha, const TargetStats& ts,
                              const EvalStats& es) {
    os << "{\"step\":" << step;
    json_num(os, "critic_loss", critic_loss);
    json_num(os, "policy_loss", policy_loss);
    json_num(os, "alpha", alpha);
    json_num(os, "mean_f", ts.mean_f);
    json_num(os, "max_f", ts.max_f);
    json_num(os, "model_fraction", ts.model_fraction);
    json_num(os, "mean_target", ts.mean_target);
    json_num(os, "eval_return_mean", es.mean);
    json_num(os, "eval_return_std", es.stddev);
    os << "}\n";
}

}  // namespace detail

/// Offline training loop. Randomness comes from named streams derived from
/// seed: net init, batch sampling, and action noise on "agent"; model
/// rollouts on "rollout"; evaluation starts on "eval". Every eval_interval
/// steps a JSONL row goes to metrics when non-null.
/// With checkpoint_path set, the full state is saved every checkpoint_every
/// steps and at the end; resume_from restores such a file and continues
/// exactly as the uninterrupted run would have.
inline Agent train(const AgentConfig& cfg, const std::vector<Transition>& offline,
                   const GaussianEnsemble& ens, const PendulumParams& env_params, uint64_t seed,
                   std::ostream* metrics = nullptr, const std::string& checkpoint_path = "",
                   uint64_t checkpoint_every = 0, const std::string& resume_from = "") {
    cfg.validate();
    require_arg(!offline.empty(), "train: offline dataset is empty");
    const size_t ds = offline[0].s.size(), da = offline[0].a.size();
    require_arg(ds == ens.obs_dim && da == ens.act_dim, "train: dataset and model disagree");
    require_arg(ds == PendulumEnv::obs_dim && da == PendulumEnv::act_dim,
                "train: dataset does not fit the pendulum");

    RngSet rngs(seed);
    const double tl = env_params.torque_limit;
    Agent ag = Agent::make(cfg, ds, Vec(da, -tl), Vec(da, tl), rngs.agent);
    MixedBuffer buf(offline, ds, da, cfg.model_buffer_capacity);

    if (!resume_from.empty()) {
        const Checkpoint ck = Checkpoint::load(resume_from);
        ag = load_agent(ck, cfg);
        rngs.model = ck.rng("train/rng_model");
        rngs.agent = ck.rng("train/rng_agent");
        rngs.rollout = ck.rng("train/rng_rollout");
        rngs.eval = ck.rng("train/rng_eval");
        rngs.attack = ck.rng("train/rng_attack");
        const Tensor packed = ck.tensor("train/model_rows");
        require_arg(packed.rows == 0 || packed.cols == 2 * ds + da + 2,
                    "train: model-row record has the wrong width");
        std::vector<Transition> rows(packed.rows);
        for (size_t r = 0; r < packed.rows; ++r) {
            size_t c = 0;
            rows[r].s.resize(ds);
            for (size_t j = 0; j < ds; ++j) rows[r].s[j] = packed.at(r, c++);
            rows[r].a.resize(da);
            for (size_t j = 0; j < da; ++j) rows[r].a[j] = packed.at(r, c++);
            rows[r].r = packed.at(r, c++);
            rows[r].s2.resize(ds);
            for (size_t j = 0; j < ds; ++j) rows[r].s2[j] = packed.at(r, c++);
            rows[r].done = packed.at(r, c++) != 0.0;
            rows[r].src = Source::Model;
        }
        buf.restore_model(std::move(rows), ck.count("train/model_write"));
    }

    const BatchPolicy rollout_policy = [&ag](const Tensor& o, Rng& r) {
        return ag.policy.sample(o, r).first;
    };
    const RewardFn reward = [&env_params](const Vec& s, const Vec& a) {
        return PendulumEnv::reward_from_obs(s, a, env_params);
    };
    const DoneFn never_done = [](const Vec&) { return false; };
    RolloutConfig rc;
    rc.horizon = cfg.rollout_horizon;
    rc.batch = cfg.rollout_batch;

    while (ag.step < cfg.n_iter) {
        const uint64_t it = ag.step;
        try {
            if (it % cfg.rollout_interval == 0) {
                for (Transition& tr :
                     rollout(ens, rollout_policy, reward, never_done, offline, rc, rngs.rollout))
                    buf.push_model(std::move(tr));
            }
            const std::vector<Transition> rows =
                buf.sample_rows(cfg.batch, 1.0 - cfg.real_fraction, rngs.agent);
            TargetStats ts;
            const double closs = update_critics(ag, rows, &ens, rngs.agent, &ts);
            Tensor obs(rows.size(), ds);
            for (size_t r = 0; r < rows.size(); ++r)
                for (size_t j = 0; j < ds; ++j) obs.at(r, j) = rows[r].s[j];
            const double ploss = update_policy(ag, obs, rngs.agent);
            update_alpha(ag, obs, rngs.agent);
            for (size_t i = 0; i < ag.critics.size(); ++i)
                soft_update(ag.targets[i], ag.critics[i], cfg.tau);
            ++ag.step;

            // Metrics fire only at interval multiples: an off-interval row
            // would consume eval draws that a longer uninterrupted run does
            // not, breaking checkpoint-resume equivalence.
            if (metrics != nullptr && cfg.eval_interval > 0 && ag.step % cfg.eval_interval == 0) {
                const EvalStats es = evaluate_policy(ag.policy, env_params, cfg.eval_episodes,
                                                     cfg.eval_horizon, rngs.eval);
                detail::write_metrics_row(*metrics, ag.step, closs, ploss, ag.alpha(), ts, es);
            }
            if (!checkpoint_path.empty() &&
                ((checkpoint_every > 0 && ag.step % checkpoint_every == 0) ||
                 ag.step == cfg.n_iter)) {
                save_train_state(checkpoint_path, ag, buf, rngs);
            }
        } catch (const std::exception& e) {
            throw std::runtime_error("train: iteration " + std::to_string(it) + ": " + e.what());
        }
    }
    return ag;
}

}  // namespace micro
