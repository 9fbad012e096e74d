#pragma once

// Probabilistic dynamics ensemble: several diagonal-Gaussian models over
// state deltas, trained by maximum likelihood with a content-keyed holdout
// split, plus the sampling surface the conservative backup consumes — the
// per-elite sample set X(s,a), uniform-mixture next-state draws, and h-step
// synthetic rollouts. The reward of synthetic transitions comes from the
// known reward function, never from a learned head.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "micro/checkpoint.hpp"
#include "micro/dataset.hpp"
#include "micro/nn.hpp"
#include "micro/rng.hpp"
#include "micro/tape.hpp"
#include "micro/tensor.hpp"

namespace micro {

struct ModelConfig {
    std::vector<size_t> hidden = {200, 200, 200, 200};
    double lr = 1e-3;
    size_t batch = 256;
    size_t max_epochs = 100;
    size_t max_steps = 0;  // 0 = epochs only; otherwise cap total gradient steps
    size_t patience = 5;   // epochs without holdout improvement before stopping
    size_t ensemble_size = 7;
    size_t n_elites = 5;
    // clamp on predicted log sigma; keeps the likelihood away from collapse
    double log_sig_lo = -10.0;
    double log_sig_hi = 2.0;

    void validate() const {
        require_arg(!hidden.empty(), "ModelConfig: no hidden layers");
        for (size_t h : hidden) require_arg(h > 0, "ModelConfig: zero-width hidden layer");
        require_arg(lr > 0.0 && batch > 0, "ModelConfig: bad optimizer settings");
        require_arg(max_epochs > 0, "ModelConfig: max_epochs must be positive");
        require_arg(ensemble_size > 0 && n_elites > 0 && n_elites <= ensemble_size,
                    "ModelConfig: elite count exceeds ensemble size");
        require_arg(log_sig_lo <= log_sig_hi, "ModelConfig: log sigma bounds inverted");
    }
};

/// Mean and standard deviation of the next-state Gaussian, row per input.
struct GaussPred {
    Tensor mu;     // [n, obs_dim], mean of s' - s
    Tensor sigma;  // [n, obs_dim], already exponentiated and clamped
};

struct GaussianEnsemble {
    size_t obs_dim = 0;
    size_t act_dim = 0;
    double log_sig_lo = -10.0;
    double log_sig_hi = 2.0;
    std::vector<Mlp> models;
    std::vector<size_t> elites;  // ascending member indices

    bool trained() const { return !elites.empty(); }

    void require_trained() const {
        require(trained() && !models.empty(), "ensemble has no elites; train or load one first");
    }

    /// Gaussian over the state delta for one member, batched.
    GaussPred gaussian(size_t member, const Tensor& sa) const {
        require_arg(member < models.size(), "GaussianEnsemble::gaussian: member out of range");
        require_arg(sa.cols == obs_dim + act_dim, "GaussianEnsemble::gaussian: input width");
        const Tensor out = models[member].forward_plain(sa);
        GaussPred p{Tensor(sa.rows, obs_dim), Tensor(sa.rows, obs_dim)};
        for (size_t r = 0; r < sa.rows; ++r)
            for (size_t j = 0; j < obs_dim; ++j) {
                p.mu.at(r, j) = out.at(r, j);
                const double ls = std::clamp(out.at(r, obs_dim + j), log_sig_lo, log_sig_hi);
                p.sigma.at(r, j) = std::exp(ls);
            }
        return p;
    }
};

struct ModelTrainReport {
    Vec holdout_nll;  // one entry per completed epoch
    size_t best_epoch = 0;
    size_t steps = 0;
    double best_nll = 0.0;
};

struct EnsembleTrainReport {
    std::vector<ModelTrainReport> models;
};

namespace detail {

/// Mean per-transition Gaussian NLL (constant included) on a fixed set.
inline double gaussian_nll(const Mlp& net, const Tensor& sa, const Tensor& target, double ls_lo,
                           double ls_hi) {
    const size_t d = target.cols;
    const Tensor out = net.forward_plain(sa);
    double total = 0.0;
    for (size_t r = 0; r < sa.rows; ++r)
        for (size_t j = 0; j < d; ++j) {
            const double ls = std::clamp(out.at(r, d + j), ls_lo, ls_hi);
            const double z = (target.at(r, j) - out.at(r, j)) * std::exp(-ls);
            total += 0.5 * z * z + ls + 0.5 * std::log(2.0 * kPi);
        }
    return total / static_cast<double>(sa.rows);
}

inline Tensor gather_rows(const Tensor& t, const std::vector<size_t>& idx) {
    Tensor out(idx.size(), t.cols);
    for (size_t r = 0; r < idx.size(); ++r)
        for (size_t j = 0; j < t.cols; ++j) out.at(r, j) = t.at(idx[r], j);
    return out;
}

}  // namespace detail

/// Fit one Gaussian model by Adam on the NLL of state deltas. Batches are
/// drawn by modular index, so a duplicated training pool yields the same
/// batch contents and therefore the same parameter trajectory.
inline ModelTrainReport train_gaussian_model(Mlp& net, const Tensor& train_sa,
                                             const Tensor& train_delta, const Tensor& hold_sa,
                                             const Tensor& hold_delta, const ModelConfig& cfg,
                                             Rng& rng) {
    const size_t n = train_sa.rows;
    const size_t d = train_delta.cols;
    MlpAdam adam(net);
    ModelTrainReport report;
    Mlp best = net;
    double best_nll = detail::gaussian_nll(net, hold_sa, hold_delta, cfg.log_sig_lo, cfg.log_sig_hi);
    report.best_nll = best_nll;
    size_t bad_epochs = 0;
    const size_t steps_per_epoch = std::max<size_t>(1, n / cfg.batch);

    for (size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        for (size_t step = 0; step < steps_per_epoch; ++step) {
            if (cfg.max_steps > 0 && report.steps >= cfg.max_steps) break;
            Tensor bs(cfg.batch, train_sa.cols), bd(cfg.batch, d);
            for (size_t r = 0; r < cfg.batch; ++r) {
                const size_t i = static_cast<size_t>(rng.raw64() % n);
                for (size_t j = 0; j < train_sa.cols; ++j) bs.at(r, j) = train_sa.at(i, j);
                for (size_t j = 0; j < d; ++j) bd.at(r, j) = train_delta.at(i, j);
            }
            Tape tape;
            const Mlp::Staged st = net.stage(tape, true);
            const Tape::NodeId out = net.forward(tape, st, tape.input(std::move(bs)));
            const Tape::NodeId mu = tape.slice_cols(out, 0, d);
            const Tape::NodeId ls = tape.clamp(tape.slice_cols(out, d, 2 * d), cfg.log_sig_lo,
                                               cfg.log_sig_hi);
            const Tape::NodeId err = tape.sub(tape.input(std::move(bd)), mu);
            const Tape::NodeId z = tape.mul(err, tape.exp(tape.neg(ls)));
            const Tape::NodeId per_dim = tape.add(tape.scale(tape.square(z), 0.5), ls);
            const Tape::NodeId loss =
                tape.scale(tape.sum_all(per_dim), 1.0 / static_cast<double>(cfg.batch));
            tape.backward(loss);
            adam.apply(net, tape, st, cfg.lr);
            ++report.steps;
        }
        const double nll =
            detail::gaussian_nll(net, hold_sa, hold_delta, cfg.log_sig_lo, cfg.log_sig_hi);
        report.holdout_nll.push_back(nll);
        if (nll < best_nll) {
            best_nll = nll;
            best = net;
            report.best_epoch = epoch;
            report.best_nll = nll;
            bad_epochs = 0;
        } else {
            ++bad_epochs;
        }
        if (bad_epochs > cfg.patience) break;
        if (cfg.max_steps > 0 && report.steps >= cfg.max_steps) break;
    }
    net = best;
    return report;
}

/// Train the full ensemble. The holdout split is keyed on transition content
/// (hash mod 10), so identical records always land on the same side no
/// matter how often they repeat; members differ only through their named
/// rng streams.
inline GaussianEnsemble train_ensemble(const std::vector<Transition>& rows, size_t obs_dim,
                                       size_t act_dim, const ModelConfig& cfg, uint64_t seed,
                                       EnsembleTrainReport* report = nullptr) {
    cfg.validate();
    require_arg(rows.size() >= 10, "train_ensemble: need at least 10 transitions");
    for (const Transition& t : rows)
        require_arg(t.s.size() == obs_dim && t.a.size() == act_dim && t.s2.size() == obs_dim,
                    "train_ensemble: transition arity mismatch");

    std::vector<size_t> train_idx, hold_idx;
    for (size_t i = 0; i < rows.size(); ++i)
        (transition_hash(rows[i]) % 10 == 0 ? hold_idx : train_idx).push_back(i);
    if (train_idx.empty() || hold_idx.empty()) {
        // degenerate hash split (tiny or adversarial data): fall back to
        // position so both sides stay populated
        train_idx.clear();
        hold_idx.clear();
        for (size_t i = 0; i < rows.size(); ++i)
            (i % 10 == 0 ? hold_idx : train_idx).push_back(i);
    }

    const auto pack = [&](const std::vector<size_t>& idx, Tensor& sa, Tensor& delta) {
        sa = Tensor(idx.size(), obs_dim + act_dim);
        delta = Tensor(idx.size(), obs_dim);
        for (size_t r = 0; r < idx.size(); ++r) {
            const Transition& t = rows[idx[r]];
            for (size_t j = 0; j < obs_dim; ++j) {
                sa.at(r, j) = t.s[j];
                delta.at(r, j) = t.s2[j] - t.s[j];
            }
            for (size_t j = 0; j < act_dim; ++j) sa.at(r, obs_dim + j) = t.a[j];
        }
    };
    Tensor train_sa, train_delta, hold_sa, hold_delta;
    pack(train_idx, train_sa, train_delta);
    pack(hold_idx, hold_sa, hold_delta);

    GaussianEnsemble ens;
    ens.obs_dim = obs_dim;
    ens.act_dim = act_dim;
    ens.log_sig_lo = cfg.log_sig_lo;
    ens.log_sig_hi = cfg.log_sig_hi;

    std::vector<size_t> dims{obs_dim + act_dim};
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    dims.push_back(2 * obs_dim);

    Vec scores;
    for (size_t m = 0; m < cfg.ensemble_size; ++m) {
        Rng rng(seed, "model-" + std::to_string(m));
        Mlp net = Mlp::make(dims, Act::Relu, rng);
        ModelTrainReport r =
            train_gaussian_model(net, train_sa, train_delta, hold_sa, hold_delta, cfg, rng);
        scores.push_back(r.best_nll);
        ens.models.push_back(std::move(net));
        if (report) report->models.push_back(std::move(r));
    }

    std::vector<size_t> order(cfg.ensemble_size);
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    ens.elites.assign(order.begin(), order.begin() + cfg.n_elites);
    std::sort(ens.elites.begin(), ens.elites.end());
    return ens;
}

// ---- sampling ----------------------------------------------------------------

/// X(s,a) batched: one Gaussian sample per elite for every row. Result is
/// one [n, obs_dim] tensor per elite, in elite order.
inline std::vector<Tensor> predict_set_batch(const GaussianEnsemble& ens, const Tensor& s,
                                             const Tensor& a, Rng& rng) {
    ens.require_trained();
    require_arg(s.cols == ens.obs_dim && a.cols == ens.act_dim && s.rows == a.rows,
                "predict_set_batch: shape mismatch");
    const Tensor sa = hstack(s, a);
    std::vector<Tensor> xs;
    for (size_t e : ens.elites) {
        const GaussPred p = ens.gaussian(e, sa);
        Tensor x(s.rows, ens.obs_dim);
        for (size_t r = 0; r < s.rows; ++r)
            for (size_t j = 0; j < ens.obs_dim; ++j)
                x.at(r, j) = s.at(r, j) + p.mu.at(r, j) + p.sigma.at(r, j) * rng.normal();
        xs.push_back(std::move(x));
    }
    return xs;
}

/// X(s,a) for a single (s,a).
inline std::vector<Vec> predict_set(const GaussianEnsemble& ens, const Vec& s, const Vec& a,
                                    Rng& rng) {
    Tensor st(1, s.size()), at(1, a.size());
    st.data = s;
    at.data = a;
    std::vector<Vec> out;
    for (const Tensor& x : predict_set_batch(ens, st, at, rng)) out.push_back(x.data);
    return out;
}

/// Uniform-mixture next states: each row picks one elite uniformly, then
/// samples its Gaussian. Choices are drawn first, then one normal block, so
/// the draw count per row is fixed.
inline Tensor sample_mixture_batch(const GaussianEnsemble& ens, const Tensor& s, const Tensor& a,
                                   Rng& rng) {
    ens.require_trained();
    require_arg(s.cols == ens.obs_dim && a.cols == ens.act_dim && s.rows == a.rows,
                "sample_mixture_batch: shape mismatch");
    const size_t n = s.rows;
    std::vector<size_t> choice(n);
    for (size_t r = 0; r < n; ++r) choice[r] = rng.below(ens.elites.size());
    Tensor z(n, ens.obs_dim);
    for (double& x : z.data) x = rng.normal();

    const Tensor sa = hstack(s, a);
    Tensor out(n, ens.obs_dim);
    for (size_t ei = 0; ei < ens.elites.size(); ++ei) {
        std::vector<size_t> idx;
        for (size_t r = 0; r < n; ++r)
            if (choice[r] == ei) idx.push_back(r);
        if (idx.empty()) continue;
        const GaussPred p = ens.gaussian(ens.elites[ei], detail::gather_rows(sa, idx));
        for (size_t k = 0; k < idx.size(); ++k) {
            const size_t r = idx[k];
            for (size_t j = 0; j < ens.obs_dim; ++j)
                out.at(r, j) = s.at(r, j) + p.mu.at(k, j) + p.sigma.at(k, j) * z.at(r, j);
        }
    }
    return out;
}

inline Vec sample_mixture(const GaussianEnsemble& ens, const Vec& s, const Vec& a, Rng& rng) {
    Tensor st(1, s.size()), at(1, a.size());
    st.data = s;
    at.data = a;
    return sample_mixture_batch(ens, st, at, rng).data;
}

// ---- synthetic rollouts --------------------------------------------------------

struct RolloutConfig {
    size_t horizon = 5;
    size_t batch = 512;  // start states per rollout call
};

/// Policy callback: states [n, obs_dim] -> actions [n, act_dim].
using BatchPolicy = std::function<Tensor(const Tensor&, Rng&)>;
using RewardFn = std::function<double(const Vec&, const Vec&)>;
using DoneFn = std::function<bool(const Vec&)>;

/// Generate up to horizon*batch model transitions: start states uniform from
/// the offline rows, actions from the policy, next states from the elite
/// mixture, rewards from the known reward function. Rows stop at a terminal
/// flag or the horizon, whichever comes first.
inline std::vector<Transition> rollout(const GaussianEnsemble& ens, const BatchPolicy& policy,
                                       const RewardFn& reward, const DoneFn& done,
                                       const std::vector<Transition>& offline,
                                       const RolloutConfig& cfg, Rng& rng) {
    ens.require_trained();
    require_arg(cfg.horizon >= 1, "rollout: horizon must be at least 1");
    require_arg(cfg.batch >= 1, "rollout: empty start batch");
    require_arg(!offline.empty(), "rollout: no offline rows to start from");

    Tensor s(cfg.batch, ens.obs_dim);
    for (size_t r = 0; r < cfg.batch; ++r) {
        const Transition& t = offline[rng.below(offline.size())];
        require_arg(t.s.size() == ens.obs_dim, "rollout: offline arity mismatch");
        for (size_t j = 0; j < ens.obs_dim; ++j) s.at(r, j) = t.s[j];
    }

    std::vector<Transition> out;
    for (size_t step = 0; step < cfg.horizon && s.rows > 0; ++step) {
        const Tensor a = policy(s, rng);
        require(a.rows == s.rows && a.cols == ens.act_dim, "rollout: policy output shape");
        const Tensor s2 = sample_mixture_batch(ens, s, a, rng);
        std::vector<size_t> alive;
        for (size_t r = 0; r < s.rows; ++r) {
            Transition t;
            t.s.assign(s.data.begin() + r * s.cols, s.data.begin() + (r + 1) * s.cols);
            t.a.assign(a.data.begin() + r * a.cols, a.data.begin() + (r + 1) * a.cols);
            t.s2.assign(s2.data.begin() + r * s2.cols, s2.data.begin() + (r + 1) * s2.cols);
            t.r = reward(t.s, t.a);
            t.done = done(t.s2);
            t.src = Source::Model;
            if (!t.done) alive.push_back(r);
            out.push_back(std::move(t));
        }
        s = detail::gather_rows(s2, alive);
    }
    return out;
}

// ---- persistence ----------------------------------------------------------------

inline void save_ensemble(Checkpoint& ck, const std::string& prefix, const GaussianEnsemble& ens) {
    ck.put_count(prefix + "obs_dim", ens.obs_dim);
    ck.put_count(prefix + "act_dim", ens.act_dim);
    ck.put_count(prefix + "n_models", ens.models.size());
    ck.put_scalar(prefix + "log_sig_lo", ens.log_sig_lo);
    ck.put_scalar(prefix + "log_sig_hi", ens.log_sig_hi);
    ck.put_u64(prefix + "elites", std::vector<uint64_t>(ens.elites.begin(), ens.elites.end()));
    for (size_t m = 0; m < ens.models.size(); ++m)
        ck.put_mlp(prefix + "model" + std::to_string(m) + "/", ens.models[m]);
}

inline GaussianEnsemble load_ensemble(const Checkpoint& ck, const std::string& prefix) {
    GaussianEnsemble ens;
    ens.obs_dim = ck.count(prefix + "obs_dim");
    ens.act_dim = ck.count(prefix + "act_dim");
    ens.log_sig_lo = ck.scalar(prefix + "log_sig_lo");
    ens.log_sig_hi = ck.scalar(prefix + "log_sig_hi");
    const size_t n_models = ck.count(prefix + "n_models");
    for (size_t m = 0; m < n_models; ++m)
        ens.models.push_back(ck.mlp(prefix + "model" + std::to_string(m) + "/"));
    for (uint64_t e : ck.u64s(prefix + "elites")) {
        require(e < n_models, "load_ensemble: elite index out of range");
        ens.elites.push_back(static_cast<size_t>(e));
    }
    for (const Mlp& net : ens.models) {
        require(net.in_dim() == ens.obs_dim + ens.act_dim, "load_ensemble: model input width");
        require(net.out_dim() == 2 * ens.obs_dim, "load_ensemble: model output width");
    }
    return ens;
}

}  // namespace micro
