#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "agent.hpp"
#include "common.hpp"
#include "datagen.hpp"
#include "dynamics.hpp"

namespace micro {

/// One flat configuration shared by every command; each command reads the
/// keys it needs. Experiment-defining values (horizon, penalty weight, batch
/// mix) are restricted to their preset sets, everything else to sane ranges.
struct RunConfig {
    std::string env = "pendulum";
    std::string tier = "medium";
    std::string dataset;     // path to a dataset file (train/attack input)
    std::string checkpoint;  // path to a training checkpoint
    std::string resume;      // checkpoint to continue training from
    std::string out;         // output directory; beats the MICRO_OUT_DIR env var
    std::string fixtures = "fixtures";  // directory of tabular MDP fixtures
    uint64_t seed = 0;

    // dataset generation
    size_t n = 10000;  // transitions per generated dataset
    size_t online_steps = 30000;
    size_t warmup_steps = 1000;
    size_t snapshot_interval = 1000;
    std::vector<size_t> datagen_hidden{64, 64};
    size_t datagen_batch = 128;

    // agent
    size_t rollout_horizon = 5;  // h
    double beta = 0.5;
    double real_fraction = 0.95;  // f
    double gamma = 0.99;
    double tau = 5e-3;
    size_t batch = 256;
    double lr_policy = 1e-4;
    double lr_critic = 3e-4;
    size_t n_critics = 2;  // K
    std::vector<size_t> hidden_policy{256, 256};
    std::vector<size_t> hidden_critic{256, 256};
    size_t rollout_interval = 1000;
    size_t rollout_batch = 512;
    uint64_t n_iter = 100000;
    uint64_t eval_interval = 1000;
    uint64_t checkpoint_every = 0;  // 0 = only at the end of training

    // dynamics model
    double lr_model = 1e-3;
    size_t ensemble_size = 7;
    size_t n_elites = 5;
    std::vector<size_t> hidden_model{200, 200, 200, 200};
    size_t model_max_epochs = 100;
    size_t model_max_steps = 0;

    // evaluation / robustness
    size_t eval_episodes = 10;
    size_t eval_horizon = 200;
    std::string attack_kinds = "ra,ad,mq";
    std::string attack_eps = "0,0.05,0.1,0.15,0.2";
    size_t attack_candidates = 30;
    std::string sweep_gravity = "0.6,0.8,1.0,1.2,1.4";
    std::string sweep_friction = "0.6,0.8,1.0,1.2,1.4";

    void validate() const;
};

namespace detail {

inline bool value_in(double x, std::initializer_list<double> set) {
    for (double v : set)
        if (x == v) return true;
    return false;
}

// shortest decimal form that parses back to exactly the same double
inline std::string fmt_double(double x) {
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, x);
        if (std::strtod(buf, nullptr) == x) break;
    }
    return buf;
}

inline std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : text) {
        if (c == ',') {
            parts.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur += c;
        }
    }
    parts.push_back(cur);
    return parts;
}

}  // namespace detail

inline std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
    std::vector<double> out;
    for (const std::string& p : detail::split_list(text)) {
        require_arg(!p.empty(), "config: empty entry in " + what + " list");
        size_t pos = 0;
        double x = 0.0;
        try {
            x = std::stod(p, &pos);
        } catch (const std::exception&) {
            throw std::invalid_argument("config: bad number '" + p + "' in " + what);
        }
        require_arg(pos == p.size(), "config: bad number '" + p + "' in " + what);
        out.push_back(x);
    }
    return out;
}

inline std::vector<size_t> parse_size_list(const std::string& text, const std::string& what) {
    std::vector<size_t> out;
    for (double x : parse_double_list(text, what)) {
        require_arg(x >= 0.0 && x == static_cast<double>(static_cast<size_t>(x)),
                    "config: " + what + " entries must be non-negative integers");
        out.push_back(static_cast<size_t>(x));
    }
    return out;
}

inline std::string join_size_list(const std::vector<size_t>& xs) {
    std::string s;
    for (size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
    return s;
}

inline void RunConfig::validate() const {
    require_arg(env == "pendulum", "config: unknown env '" + env + "'");
    require_arg(tier == "medium" || tier == "medium-replay" || tier == "medium-expert",
                "config: unknown tier '" + tier + "'");
    require_arg(n > 0, "config: n must be positive");
    require_arg(online_steps > 0 && snapshot_interval > 0,
                "config: datagen schedule must be positive");
    require_arg(!datagen_hidden.empty() && datagen_batch > 0, "config: bad datagen net settings");
    require_arg(rollout_horizon == 1 || rollout_horizon == 5 || rollout_horizon == 10,
                "config: rollout_horizon must be one of {1,5,10}");
    require_arg(detail::value_in(beta, {0.1, 0.2, 0.5, 1.0}),
                "config: beta must be one of {0.1,0.2,0.5,1}");
    require_arg(detail::value_in(real_fraction, {0.5, 0.95}),
                "config: real_fraction must be one of {0.5,0.95}");
    require_arg(gamma > 0.0 && gamma < 1.0, "config: gamma must lie in (0,1)");
    require_arg(tau > 0.0 && tau <= 1.0, "config: tau must lie in (0,1]");
    require_arg(batch > 0, "config: batch must be positive");
    require_arg(lr_policy > 0.0 && lr_critic > 0.0 && lr_model > 0.0,
                "config: learning rates must be positive");
    require_arg(n_critics >= 2, "config: need at least two critics");
    require_arg(!hidden_policy.empty() && !hidden_critic.empty() && !hidden_model.empty(),
                "config: hidden layer lists must be non-empty");
    require_arg(rollout_interval > 0 && rollout_batch > 0, "config: rollout schedule must be positive");
    require_arg(n_iter > 0, "config: n_iter must be positive");
    require_arg(ensemble_size > 0 && n_elites > 0 && n_elites <= ensemble_size,
                "config: elite count exceeds ensemble size");
    require_arg(model_max_epochs > 0, "config: model_max_epochs must be positive");
    require_arg(eval_episodes > 0 && eval_horizon > 0, "config: evaluation shape must be positive");
    require_arg(attack_candidates > 0, "config: attack_candidates must be positive");
    for (double e : parse_double_list(attack_eps, "attack_eps"))
        require_arg(e >= 0.0, "config: attack_eps entries must be >= 0");
    for (const std::string& k : detail::split_list(attack_kinds))
        require_arg(k == "ra" || k == "ad" || k == "mq",
                    "config: unknown attack kind '" + k + "'");
    for (double g : parse_double_list(sweep_gravity, "sweep_gravity"))
        require_arg(g > 0.0, "config: sweep multipliers must be positive");
    for (double f : parse_double_list(sweep_friction, "sweep_friction"))
        require_arg(f > 0.0, "config: sweep multipliers must be positive");
}

namespace detail {

/// Single point of truth for the key set: applies one visitor to every
/// (name, field) pair so parsing and serialization cannot drift apart.
template <typename V>
void visit_config(RunConfig& c, V&& v) {
    v("env", c.env);
    v("tier", c.tier);
    v("dataset", c.dataset);
    v("checkpoint", c.checkpoint);
    v("resume", c.resume);
    v("out", c.out);
    v("fixtures", c.fixtures);
    v("seed", c.seed);
    v("n", c.n);
    v("online_steps", c.online_steps);
    v("warmup_steps", c.warmup_steps);
    v("snapshot_interval", c.snapshot_interval);
    v("datagen_hidden", c.datagen_hidden);
    v("datagen_batch", c.datagen_batch);
    v("rollout_horizon", c.rollout_horizon);
    v("beta", c.beta);
    v("real_fraction", c.real_fraction);
    v("gamma", c.gamma);
    v("tau", c.tau);
    v("batch", c.batch);
    v("lr_policy", c.lr_policy);
    v("lr_critic", c.lr_critic);
    v("n_critics", c.n_critics);
    v("hidden_policy", c.hidden_policy);
    v("hidden_critic", c.hidden_critic);
    v("rollout_interval", c.rollout_interval);
    v("rollout_batch", c.rollout_batch);
    v("n_iter", c.n_iter);
    v("eval_interval", c.eval_interval);
    v("checkpoint_every", c.checkpoint_every);
    v("lr_model", c.lr_model);
    v("ensemble_size", c.ensemble_size);
    v("n_elites", c.n_elites);
    v("hidden_model", c.hidden_model);
    v("model_max_epochs", c.model_max_epochs);
    v("model_max_steps", c.model_max_steps);
    v("eval_episodes", c.eval_episodes);
    v("eval_horizon", c.eval_horizon);
    v("attack_kinds", c.attack_kinds);
    v("attack_eps", c.attack_eps);
    v("attack_candidates", c.attack_candidates);
    v("sweep_gravity", c.sweep_gravity);
    v("sweep_friction", c.sweep_friction);
}

struct SetField {
    const std::string& key;
    const std::string& value;
    bool* hit;

    void operator()(const char* name, std::string& f) const {
        if (key == name) {
            f = value;
            *hit = true;
        }
    }
    void operator()(const char* name, double& f) const {
        if (key != name) return;
        const std::vector<double> xs = parse_double_list(value, name);
        require_arg(xs.size() == 1, "config: key '" + key + "' takes one number");
        f = xs[0];
        *hit = true;
    }
    template <typename T, std::enable_if_t<std::is_unsigned_v<T>, int> = 0>
    void operator()(const char* name, T& f) const {
        if (key != name) return;
        const std::vector<size_t> xs = parse_size_list(value, name);
        require_arg(xs.size() == 1, "config: key '" + key + "' takes one integer");
        f = static_cast<T>(xs[0]);
        *hit = true;
    }
    void operator()(const char* name, std::vector<size_t>& f) const {
        if (key != name) return;
        f = parse_size_list(value, name);
        require_arg(!f.empty(), "config: key '" + key + "' takes a non-empty list");
        *hit = true;
    }
};

struct WriteField {
    std::ostream& out;

    void operator()(const char* name, const std::string& f) const {
        out << name << " = " << f << "\n";
    }
    void operator()(const char* name, double f) const {
        out << name << " = " << fmt_double(f) << "\n";
    }
    template <typename T, std::enable_if_t<std::is_unsigned_v<T>, int> = 0>
    void operator()(const char* name, T f) const {
        out << name << " = " << f << "\n";
    }
    void operator()(const char* name, const std::vector<size_t>& f) const {
        out << name << " = " << join_size_list(f) << "\n";
    }
};

}  // namespace detail

/// Apply one "key = value" assignment; unknown keys are rejected.
inline void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    bool hit = false;
    detail::visit_config(cfg, detail::SetField{key, value, &hit});
    require_arg(hit, "config: unknown key '" + key + "'");
}

/// Serialize every key in declaration order; the output parses back to an
/// identical configuration.
inline std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream out;
    detail::visit_config(const_cast<RunConfig&>(cfg), detail::WriteField{out});
    return out.str();
}

/// Parse "key = value" lines ('#' starts a comment, blank lines ignored)
/// on top of the given base configuration.
inline void parse_config_text(RunConfig& cfg, const std::string& text, const std::string& where) {
    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const size_t eq = line.find('=');
        std::string key, value;
        if (eq == std::string::npos) {
            std::istringstream ss(line);
            if (!(ss >> key)) continue;  // blank
            throw std::invalid_argument("config: " + where + ":" + std::to_string(lineno) +
                                        ": expected 'key = value'");
        }
        auto trim = [](std::string s) {
            const char* ws = " \t\r";
            const size_t b = s.find_first_not_of(ws);
            if (b == std::string::npos) return std::string{};
            return s.substr(b, s.find_last_not_of(ws) - b + 1);
        };
        key = trim(line.substr(0, eq));
        value = trim(line.substr(eq + 1));
        require_arg(!key.empty(), "config: " + where + ":" + std::to_string(lineno) + ": empty key");
        try {
            set_config_key(cfg, key, value);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(where + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    parse_config_text(cfg, ss.str(), path);
}

/// Output directory: --out / config key beats MICRO_OUT_DIR beats cwd.
inline std::string resolve_out_dir(const RunConfig& cfg) {
    if (!cfg.out.empty()) return cfg.out;
    if (const char* env = std::getenv("MICRO_OUT_DIR"); env != nullptr && *env != '\0') return env;
    return ".";
}

inline AgentConfig agent_config(const RunConfig& cfg) {
    AgentConfig a;
    a.policy_hidden = cfg.hidden_policy;
    a.critic_hidden = cfg.hidden_critic;
    a.lr_policy = cfg.lr_policy;
    a.lr_critic = cfg.lr_critic;
    a.batch = cfg.batch;
    a.gamma = cfg.gamma;
    a.tau = cfg.tau;
    a.n_critics = cfg.n_critics;
    a.beta = cfg.beta;
    a.real_fraction = cfg.real_fraction;
    a.rollout_interval = cfg.rollout_interval;
    a.rollout_batch = cfg.rollout_batch;
    a.rollout_horizon = cfg.rollout_horizon;
    a.n_iter = cfg.n_iter;
    a.eval_interval = cfg.eval_interval;
    a.eval_episodes = cfg.eval_episodes;
    a.eval_horizon = cfg.eval_horizon;
    return a;
}

inline ModelConfig model_config(const RunConfig& cfg) {
    ModelConfig m;
    m.hidden = cfg.hidden_model;
    m.lr = cfg.lr_model;
    m.batch = cfg.batch;
    m.max_epochs = cfg.model_max_epochs;
    m.max_steps = cfg.model_max_steps;
    m.ensemble_size = cfg.ensemble_size;
    m.n_elites = cfg.n_elites;
    return m;
}

inline DatagenConfig datagen_config(const RunConfig& cfg) {
    DatagenConfig d;
    d.agent.policy_hidden = cfg.datagen_hidden;
    d.agent.critic_hidden = cfg.datagen_hidden;
    d.agent.batch = cfg.datagen_batch;
    d.online_steps = cfg.online_steps;
    d.warmup_steps = cfg.warmup_steps;
    d.snapshot_interval = cfg.snapshot_interval;
    d.eval_episodes = cfg.eval_episodes;
    d.eval_horizon = cfg.eval_horizon;
    return d;
}

}  // namespace micro
