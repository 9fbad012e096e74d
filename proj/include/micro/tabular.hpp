#pragma once

// Finite-MDP laboratory. States sit on a line with metric d(i,j) = |i-j|,
// which gives the order-1 Wasserstein distance an exact closed form (the L1
// distance between CDFs) and makes every robust operator checkable against a
// brute-force enumeration over a simplex grid. Five operator variants:
//
//   bellman_standard          (TQ)[s][a] = R + g * E_{s'~P}[ V(s') ]
//   bellman_robust_bruteforce inf over kernels q with W1(q, P[s][a]) <= eps
//   bellman_robust_dual       sup_l E_{s'~P}[ min_sb V(sb) + l*d(s',sb) ] - l*eps
//   bellman_state_form        E_{s'~P}[ min over the state ball around s' ]
//   bellman_conservative      standard where data is real, state-form where
//                             it came from a learned model
//
// with V(s) = max_a Q[s][a]. All are gamma-contractions, pessimistic relative
// to the standard operator, and monotone in eps; the tests assert each.

#include <Eigen/Core>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "micro/common.hpp"
#include "micro/tensor.hpp"

namespace micro {

struct TabularMDP {
    size_t n_states = 0;
    size_t n_actions = 0;
    std::vector<std::vector<Vec>> P;  // [s][a] -> distribution over next states
    std::vector<Vec> R;               // [s][a]
    double gamma = 0.9;

    void validate() const {
        require(n_states > 0 && n_actions > 0, "TabularMDP: empty state or action set");
        require(gamma >= 0.0 && gamma < 1.0, "TabularMDP: gamma outside [0,1)");
        require(P.size() == n_states && R.size() == n_states, "TabularMDP: table sizes disagree");
        for (size_t s = 0; s < n_states; ++s) {
            require(P[s].size() == n_actions && R[s].size() == n_actions,
                    "TabularMDP: table sizes disagree");
            for (size_t a = 0; a < n_actions; ++a) {
                require(P[s][a].size() == n_states, "TabularMDP: kernel row has wrong arity");
                double sum = 0.0;
                for (double p : P[s][a]) {
                    require(p >= 0.0, "TabularMDP: negative transition probability");
                    sum += p;
                }
                require(std::abs(sum - 1.0) <= 1e-12, "TabularMDP: kernel row does not sum to 1");
            }
        }
    }

    double q_max() const { return 1.0 / (1.0 - gamma); }
};

using QTable = std::vector<Vec>;  // [s][a]

inline QTable make_q(const TabularMDP& mdp, double fill = 0.0) {
    return QTable(mdp.n_states, Vec(mdp.n_actions, fill));
}

/// V[s] = max_a Q[s][a].
inline Vec state_values(const QTable& q) {
    Vec v(q.size());
    for (size_t s = 0; s < q.size(); ++s) {
        require(!q[s].empty(), "state_values: empty action row");
        double best = q[s][0];
        for (double x : q[s]) best = std::max(best, x);
        v[s] = best;
    }
    return v;
}

inline double q_diff_inf(const QTable& a, const QTable& b) {
    require(a.size() == b.size(), "q_diff_inf: shape mismatch");
    double m = 0.0;
    for (size_t s = 0; s < a.size(); ++s) {
        require(a[s].size() == b[s].size(), "q_diff_inf: shape mismatch");
        for (size_t i = 0; i < a[s].size(); ++i) m = std::max(m, std::abs(a[s][i] - b[s][i]));
    }
    return m;
}

// ---- Wasserstein-1 on the line --------------------------------------------

namespace detail {
inline void check_simplex(const Vec& p, const char* what) {
    double sum = 0.0;
    for (double x : p) {
        require_arg(x >= 0.0, std::string(what) + ": negative mass");
        sum += x;
    }
    require_arg(std::abs(sum - 1.0) <= 1e-9, std::string(what) + ": mass does not sum to 1");
}
}  // namespace detail

/// Exact W1 between two distributions on states {0..n-1} with d(i,j)=|i-j|:
/// the L1 distance between their CDFs.
inline double w1_line(const Vec& p, const Vec& q) {
    require_arg(p.size() == q.size(), "w1_line: supports differ");
    detail::check_simplex(p, "w1_line p");
    detail::check_simplex(q, "w1_line q");
    double cdf_gap = 0.0, fp = 0.0, fq = 0.0;
    for (size_t k = 0; k + 1 < p.size(); ++k) {
        fp += p[k];
        fq += q[k];
        cdf_gap += std::abs(fp - fq);
    }
    return cdf_gap;
}

// ---- operators -------------------------------------------------------------

inline QTable bellman_standard(const TabularMDP& mdp, const QTable& q) {
    const Vec v = state_values(q);
    QTable out = make_q(mdp);
    for (size_t s = 0; s < mdp.n_states; ++s)
        for (size_t a = 0; a < mdp.n_actions; ++a) {
            double ev = 0.0;
            for (size_t s2 = 0; s2 < mdp.n_states; ++s2) ev += mdp.P[s][a][s2] * v[s2];
            out[s][a] = mdp.R[s][a] + mdp.gamma * ev;
        }
    return out;
}

/// All distributions over n states whose entries are multiples of delta.
inline std::vector<Vec> simplex_grid(size_t n, double delta) {
    require_arg(n > 0 && delta > 0.0 && delta <= 1.0, "simplex_grid: bad arguments");
    const long m = std::lround(1.0 / delta);
    require_arg(std::abs(m * delta - 1.0) < 1e-9, "simplex_grid: 1/delta must be an integer");
    std::vector<Vec> grid;
    Vec cur(n, 0.0);
    // enumerate compositions of m units into n slots, lexicographically
    std::function<void(size_t, long)> rec = [&](size_t slot, long left) {
        if (slot + 1 == n) {
            cur[slot] = static_cast<double>(left) * delta;
            grid.push_back(cur);
            return;
        }
        for (long k = left; k >= 0; --k) {
            cur[slot] = static_cast<double>(k) * delta;
            rec(slot + 1, left - k);
        }
    };
    rec(0, m);
    return grid;
}

/// Brute-force robust operator over the order-1 Wasserstein kernel ball.
/// The feasible set (simplex grid points within eps of the center, plus the
/// center itself) depends only on (mdp, eps, delta), so it is built once and
/// reused across Q evaluations.
class RobustBruteForce {
  public:
    RobustBruteForce(const TabularMDP& mdp, double eps, double delta) : mdp_(mdp) {
        require_arg(eps >= 0.0, "RobustBruteForce: negative radius");
        mdp_.validate();
        const std::vector<Vec> grid = simplex_grid(mdp_.n_states, delta);
        feasible_.resize(mdp_.n_states);
        for (size_t s = 0; s < mdp_.n_states; ++s) {
            feasible_[s].resize(mdp_.n_actions);
            for (size_t a = 0; a < mdp_.n_actions; ++a) {
                std::vector<const Vec*> keep;
                for (const Vec& cand : grid)
                    if (w1_line(cand, mdp_.P[s][a]) <= eps + 1e-12) keep.push_back(&cand);
                // the center is feasible at any radius; include it explicitly
                // so eps = 0 reproduces the standard operator exactly even if
                // the center is off-grid
                EMat mat(keep.size() + 1, mdp_.n_states);
                for (size_t i = 0; i < keep.size(); ++i)
                    for (size_t j = 0; j < mdp_.n_states; ++j) mat(i, j) = (*keep[i])[j];
                for (size_t j = 0; j < mdp_.n_states; ++j)
                    mat(keep.size(), j) = mdp_.P[s][a][j];
                feasible_[s][a] = std::move(mat);
            }
        }
    }

    size_t feasible_count(size_t s, size_t a) const {
        return static_cast<size_t>(feasible_[s][a].rows());
    }

    QTable apply(const QTable& q) const {
        const Vec v = state_values(q);
        const Eigen::Map<const Eigen::VectorXd> ev(v.data(), static_cast<Eigen::Index>(v.size()));
        QTable out = make_q(mdp_);
        for (size_t s = 0; s < mdp_.n_states; ++s)
            for (size_t a = 0; a < mdp_.n_actions; ++a) {
                const double worst = (feasible_[s][a] * ev).minCoeff();
                out[s][a] = mdp_.R[s][a] + mdp_.gamma * worst;
            }
        return out;
    }

  private:
    TabularMDP mdp_;
    std::vector<std::vector<EMat>> feasible_;  // [s][a]: rows = candidate kernels
};

inline QTable bellman_robust_bruteforce(const TabularMDP& mdp, const QTable& q, double eps,
                                        double delta) {
    return RobustBruteForce(mdp, eps, delta).apply(q);
}

/// {0} followed by log-spaced positive values up to 10/(1-gamma). The low
/// anchor trades resolution below it (where the dual objective is nearly
/// flat) for density around the slope kinks of value-scale tables.
inline Vec lambda_grid(double gamma, size_t n = 200, double lo = 0.05) {
    require_arg(n >= 2 && lo > 0.0 && gamma >= 0.0 && gamma < 1.0, "lambda_grid: bad arguments");
    const double hi = 10.0 / (1.0 - gamma);
    Vec grid{0.0};
    const double ratio = std::pow(hi / lo, 1.0 / static_cast<double>(n - 2));
    double x = lo;
    for (size_t i = 1; i < n; ++i) {
        grid.push_back(x);
        x *= ratio;
    }
    grid.back() = hi;  // land exactly on the endpoint
    return grid;
}

/// Dual form of the robust operator: for each (s,a),
///   sup_l  E_{s'~P}[ min_sb ( V(sb) + l * d(s', sb) ) ] - l * eps
/// with the sup over a finite lambda grid and the inner min exact.
inline QTable bellman_robust_dual(const TabularMDP& mdp, const QTable& q, double eps,
                                  const Vec& lambdas) {
    require_arg(!lambdas.empty(), "bellman_robust_dual: empty lambda grid");
    require_arg(eps >= 0.0, "bellman_robust_dual: negative radius");
    const Vec v = state_values(q);
    const size_t n = mdp.n_states;
    QTable out = make_q(mdp);
    // inner[l][s'] = min_sb ( v[sb] + l * |s' - sb| ), shared across (s,a)
    std::vector<Vec> inner(lambdas.size(), Vec(n, 0.0));
    for (size_t li = 0; li < lambdas.size(); ++li)
        for (size_t s2 = 0; s2 < n; ++s2) {
            double best = v[s2];
            for (size_t sb = 0; sb < n; ++sb) {
                const double d = static_cast<double>(s2 > sb ? s2 - sb : sb - s2);
                best = std::min(best, v[sb] + lambdas[li] * d);
            }
            inner[li][s2] = best;
        }
    for (size_t s = 0; s < n; ++s)
        for (size_t a = 0; a < mdp.n_actions; ++a) {
            double sup = -1e300;
            for (size_t li = 0; li < lambdas.size(); ++li) {
                double ev = 0.0;
                for (size_t s2 = 0; s2 < n; ++s2) ev += mdp.P[s][a][s2] * inner[li][s2];
                sup = std::max(sup, ev - lambdas[li] * eps);
            }
            out[s][a] = mdp.R[s][a] + mdp.gamma * sup;
        }
    return out;
}

/// State-uncertainty-set form: each sampled next state may be swapped for
/// the worst state within distance eps of it.
inline QTable bellman_state_form(const TabularMDP& mdp, const QTable& q, double eps) {
    require_arg(eps >= 0.0, "bellman_state_form: negative radius");
    const Vec v = state_values(q);
    const size_t n = mdp.n_states;
    const long w = static_cast<long>(std::floor(eps + 1e-12));  // window radius in states
    Vec worst(n);
    for (long s2 = 0; s2 < static_cast<long>(n); ++s2) {
        const long lo = std::max<long>(0, s2 - w);
        const long hi = std::min<long>(static_cast<long>(n) - 1, s2 + w);
        double best = v[s2];
        for (long sb = lo; sb <= hi; ++sb) best = std::min(best, v[sb]);
        worst[s2] = best;
    }
    QTable out = make_q(mdp);
    for (size_t s = 0; s < n; ++s)
        for (size_t a = 0; a < mdp.n_actions; ++a) {
            double ev = 0.0;
            for (size_t s2 = 0; s2 < n; ++s2) ev += mdp.P[s][a][s2] * worst[s2];
            out[s][a] = mdp.R[s][a] + mdp.gamma * ev;
        }
    return out;
}

/// Per-(s,a) flag: true where the backup may trust real data.
using SourceMask = std::vector<std::vector<uint8_t>>;

/// Conservative operator: standard backup through the true kernel where the
/// mask marks real data, pessimistic state-form backup through the estimated
/// kernel elsewhere.
inline QTable bellman_conservative(const TabularMDP& mdp_true, const TabularMDP& mdp_est,
                                   const QTable& q, double eps, const SourceMask& mask) {
    require_arg(mdp_true.n_states == mdp_est.n_states && mdp_true.n_actions == mdp_est.n_actions,
                "bellman_conservative: MDP shapes disagree");
    require_arg(mask.size() == mdp_true.n_states, "bellman_conservative: mask shape mismatch");
    const QTable standard = bellman_standard(mdp_true, q);
    const QTable robust = bellman_state_form(mdp_est, q, eps);
    QTable out = make_q(mdp_true);
    for (size_t s = 0; s < mdp_true.n_states; ++s) {
        require_arg(mask[s].size() == mdp_true.n_actions, "bellman_conservative: mask shape mismatch");
        for (size_t a = 0; a < mdp_true.n_actions; ++a)
            out[s][a] = mask[s][a] ? standard[s][a] : robust[s][a];
    }
    return out;
}

// ---- fixpoint iteration -----------------------------------------------------

struct FixpointResult {
    QTable q;
    size_t iterations = 0;
};

/// Apply `op` until successive tables differ by less than tol in sup norm,
/// clipping to [0, q_max] after each application (the Q function class).
inline FixpointResult iterate_to_fixpoint(const std::function<QTable(const QTable&)>& op,
                                          QTable q0, double tol, double q_max) {
    constexpr size_t kMaxIter = 1000000;
    require_arg(tol > 0.0 && q_max > 0.0, "iterate_to_fixpoint: bad arguments");
    for (size_t it = 1; it <= kMaxIter; ++it) {
        QTable next = op(q0);
        for (Vec& row : next)
            for (double& x : row) x = std::clamp(x, 0.0, q_max);
        const double diff = q_diff_inf(next, q0);
        q0 = std::move(next);
        if (diff < tol) return {std::move(q0), it};
    }
    throw std::runtime_error("iterate_to_fixpoint: no convergence within 1e6 iterations");
}

// ---- fixture files ----------------------------------------------------------
//
// Plain text, whitespace separated, '#' starts a comment line:
//
//   states 3
//   actions 2
//   gamma 0.9
//   P <s> <a> : p0 p1 ... p{n-1}
//   R <s> <a> : r
//
// Every (s,a) must appear in exactly one P line and one R line.

inline TabularMDP load_mdp(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "load_mdp: cannot open " + path);
    TabularMDP mdp;
    mdp.gamma = -1.0;
    std::vector<std::vector<uint8_t>> seen_p, seen_r;
    std::string line;
    size_t lineno = 0;
    auto fail = [&](const std::string& msg) {
        throw std::runtime_error("load_mdp: " + path + ":" + std::to_string(lineno) + ": " + msg);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key)) continue;
        if (key == "states") {
            if (!(ss >> mdp.n_states) || mdp.n_states == 0) fail("bad states line");
        } else if (key == "actions") {
            if (!(ss >> mdp.n_actions) || mdp.n_actions == 0) fail("bad actions line");
        } else if (key == "gamma") {
            if (!(ss >> mdp.gamma)) fail("bad gamma line");
        } else if (key == "P" || key == "R") {
            if (mdp.n_states == 0 || mdp.n_actions == 0)
                fail("P/R line before states/actions declared");
            if (mdp.P.empty()) {
                mdp.P.assign(mdp.n_states, std::vector<Vec>(mdp.n_actions));
                mdp.R.assign(mdp.n_states, Vec(mdp.n_actions, 0.0));
                seen_p.assign(mdp.n_states, std::vector<uint8_t>(mdp.n_actions, 0));
                seen_r = seen_p;
            }
            size_t s, a;
            std::string colon;
            if (!(ss >> s >> a >> colon) || colon != ":") fail("expected '<s> <a> :'");
            if (s >= mdp.n_states || a >= mdp.n_actions) fail("state or action index out of range");
            if (key == "P") {
                if (seen_p[s][a]) fail("duplicate P entry");
                Vec row;
                double x;
                while (ss >> x) row.push_back(x);
                if (row.size() != mdp.n_states) fail("kernel row has wrong arity");
                mdp.P[s][a] = std::move(row);
                seen_p[s][a] = 1;
            } else {
                if (seen_r[s][a]) fail("duplicate R entry");
                double r;
                if (!(ss >> r)) fail("missing reward value");
                if (r < 0.0 || r > 1.0) fail("reward outside [0,1]");
                mdp.R[s][a] = r;
                seen_r[s][a] = 1;
            }
        } else {
            fail("unknown directive '" + key + "'");
        }
    }
    lineno = 0;
    if (mdp.gamma < 0.0) fail("missing gamma");
    if (mdp.P.empty()) fail("no P/R entries");
    for (size_t s = 0; s < mdp.n_states; ++s)
        for (size_t a = 0; a < mdp.n_actions; ++a) {
            if (!seen_p[s][a]) fail("missing P entry for (" + std::to_string(s) + "," + std::to_string(a) + ")");
            if (!seen_r[s][a]) fail("missing R entry for (" + std::to_string(s) + "," + std::to_string(a) + ")");
        }
    mdp.validate();
    return mdp;
}

}  // namespace micro
