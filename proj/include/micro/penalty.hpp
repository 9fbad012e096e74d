#pragma once

// Conservative critic targets. Model-sourced transitions are penalized by how
// much the value at the sampled next state exceeds the worst value across the
// ensemble's per-elite next-state samples; offline transitions keep the plain
// entropy-regularized target. All candidate-state values are scored the same
// way: min over the target critics at a single policy-sampled action.

#include <functional>
#include <utility>
#include <vector>

#include "micro/common.hpp"
#include "micro/dataset.hpp"
#include "micro/dynamics.hpp"
#include "micro/rng.hpp"
#include "micro/tensor.hpp"

namespace micro {

/// Batched policy head: obs [n,ds] -> (actions [n,da], log-probs [n,1]).
using PolicySample = std::function<std::pair<Tensor, Tensor>(const Tensor&, Rng&)>;

/// Batched min over the target critics: (obs [n,ds], act [n,da]) -> [n,1].
using QMin = std::function<Tensor(const Tensor&, const Tensor&)>;

struct PenaltyConfig {
    double beta = 0.5;  // penalty coefficient

    void validate() const { require_arg(beta >= 0.0, "PenaltyConfig: beta must be >= 0"); }
};

/// Per-batch diagnostics for the metrics stream. f statistics cover the
/// model-sourced rows only and stay zero when a batch has none.
struct TargetStats {
    double mean_f = 0.0;
    double max_f = 0.0;
    double model_fraction = 0.0;
    double mean_target = 0.0;
};

namespace detail {

/// Worst candidate value across the per-elite sample sets: for each elite's
/// batch of states, draw one policy action, score with the critic min, and
/// keep the elementwise minimum over elites. Shapes: xs[e] is [m,ds] -> [m,1].
inline Tensor set_min_q(const QMin& qmin, const PolicySample& policy,
                        const std::vector<Tensor>& xs, Rng& rng) {
    require_arg(!xs.empty(), "set_min_q: empty sample set");
    Tensor best;
    for (const Tensor& x : xs) {
        const auto [act, logp] = policy(x, rng);
        const Tensor q = qmin(x, act);
        require_arg(q.rows == x.rows && q.cols == 1, "set_min_q: critic output must be [n,1]");
        if (best.data.empty()) {
            best = q;
        } else {
            for (size_t i = 0; i < best.data.size(); ++i)
                best.data[i] = std::min(best.data[i], q.data[i]);
        }
    }
    return best;
}

}  // namespace detail

/// Penalty for a single state-action pair, drawing both the per-elite sample
/// set and the mixture next state afresh. Draw order, all from one stream
/// seeded with (seed, "penalty-f"): the per-elite set, then the mixture
/// sample, then one policy action per candidate state (next state first,
/// elites in order). The mixture draw is independent of the set, so the
/// result may be negative; it is not clipped.
inline double penalty_f(const QMin& qmin, const PolicySample& policy, const GaussianEnsemble& ens,
                        const Vec& s, const Vec& a, uint64_t seed) {
    Rng rng(seed, "penalty-f");
    Tensor st(1, s.size()), at(1, a.size());
    st.data = s;
    at.data = a;
    const std::vector<Tensor> xs = predict_set_batch(ens, st, at, rng);
    Tensor s2(1, ens.obs_dim);
    s2.data = sample_mixture(ens, s, a, rng);
    const auto [a2, logp2] = policy(s2, rng);
    const double q_next = qmin(s2, a2).at(0, 0);
    const double q_set = detail::set_min_q(qmin, policy, xs, rng).at(0, 0);
    return q_next - q_set;
}

/// Per-transition critic targets:
///   done:            r
///   offline source:  r + gamma * (minQ(s',a') - alpha * log pi(a'|s'))
///   model source:    r + gamma * (minQ(s',a') - alpha * log pi(a'|s') - beta * f)
/// with f = minQ(s',a') - min over the elite sample set of the same score,
/// sharing the batch's single policy draw at s' for both appearances of
/// minQ(s',a'). With beta = 0 the penalty machinery is skipped entirely (no
/// ensemble queries, no extra rng draws), so the result is bit-identical to
/// the plain entropy-regularized target. The ensemble may then be null.
inline Vec critic_target(const std::vector<Transition>& batch, const QMin& qmin,
                         const PolicySample& policy, const GaussianEnsemble* ens, double alpha,
                         double gamma, const PenaltyConfig& cfg, Rng& rng,
                         TargetStats* stats = nullptr) {
    cfg.validate();
    require_arg(!batch.empty(), "critic_target: empty batch");
    require_arg(gamma > 0.0 && gamma < 1.0, "critic_target: gamma must lie in (0,1)");
    require_arg(alpha >= 0.0, "critic_target: alpha must be >= 0");
    const size_t n = batch.size();
    const size_t ds = batch[0].s.size();
    const size_t da = batch[0].a.size();

    Tensor s2(n, ds);
    std::vector<size_t> model_rows;
    for (size_t r = 0; r < n; ++r) {
        const Transition& t = batch[r];
        require_arg(t.s.size() == ds && t.a.size() == da && t.s2.size() == ds,
                    "critic_target: transition arity mismatch");
        for (size_t j = 0; j < ds; ++j) s2.at(r, j) = t.s2[j];
        if (t.src == Source::Model) model_rows.push_back(r);
    }

    const auto [a2, logp2] = policy(s2, rng);
    const Tensor qn = qmin(s2, a2);
    require_arg(qn.rows == n && qn.cols == 1, "critic_target: critic output must be [n,1]");
    require_arg(logp2.rows == n && logp2.cols == 1,
                "critic_target: policy log-probs must be [n,1]");

    Vec f(n, 0.0);
    if (!model_rows.empty() && cfg.beta > 0.0) {
        require(ens != nullptr, "critic_target: model-tagged rows need an ensemble");
        const size_t m = model_rows.size();
        Tensor sm(m, ds), am(m, da);
        for (size_t k = 0; k < m; ++k) {
            const Transition& t = batch[model_rows[k]];
            for (size_t j = 0; j < ds; ++j) sm.at(k, j) = t.s[j];
            for (size_t j = 0; j < da; ++j) am.at(k, j) = t.a[j];
        }
        const std::vector<Tensor> xs = predict_set_batch(*ens, sm, am, rng);
        const Tensor q_set = detail::set_min_q(qmin, policy, xs, rng);
        for (size_t k = 0; k < m; ++k)
            f[model_rows[k]] = qn.at(model_rows[k], 0) - q_set.at(k, 0);
    }

    Vec y(n);
    for (size_t r = 0; r < n; ++r) {
        const Transition& t = batch[r];
        const double bracket = qn.at(r, 0) - alpha * logp2.at(r, 0) - cfg.beta * f[r];
        y[r] = t.done ? t.r : t.r + gamma * bracket;
    }

    if (stats != nullptr) {
        *stats = TargetStats{};
        for (const size_t r : model_rows) {
            stats->mean_f += f[r];
            stats->max_f = (r == model_rows.front()) ? f[r] : std::max(stats->max_f, f[r]);
        }
        if (!model_rows.empty()) stats->mean_f /= static_cast<double>(model_rows.size());
        stats->model_fraction = static_cast<double>(model_rows.size()) / static_cast<double>(n);
        for (const double v : y) stats->mean_target += v;
        stats->mean_target /= static_cast<double>(n);
    }
    return y;
}

}  // namespace micro
