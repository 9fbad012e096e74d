#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "micro/agent.hpp"

using namespace micro;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

bool mlps_equal(const Mlp& a, const Mlp& b) {
    if (a.layers.size() != b.layers.size() || a.hidden_act != b.hidden_act) return false;
    for (size_t i = 0; i < a.layers.size(); ++i)
        if (!tensors_equal(a.layers[i].w, b.layers[i].w) ||
            !tensors_equal(a.layers[i].b, b.layers[i].b))
            return false;
    return true;
}

bool adams_equal(const MlpAdam& a, const MlpAdam& b) {
    if (a.ws.size() != b.ws.size()) return false;
    for (size_t i = 0; i < a.ws.size(); ++i) {
        if (!tensors_equal(a.ws[i].m, b.ws[i].m) || !tensors_equal(a.ws[i].v, b.ws[i].v) ||
            a.ws[i].step != b.ws[i].step)
            return false;
        if (!tensors_equal(a.bs[i].m, b.bs[i].m) || !tensors_equal(a.bs[i].v, b.bs[i].v) ||
            a.bs[i].step != b.bs[i].step)
            return false;
    }
    return true;
}

bool agents_equal(const Agent& x, const Agent& y) {
    if (!mlps_equal(x.policy.net, y.policy.net)) return false;
    if (x.critics.size() != y.critics.size()) return false;
    for (size_t i = 0; i < x.critics.size(); ++i) {
        if (!mlps_equal(x.critics[i], y.critics[i])) return false;
        if (!mlps_equal(x.targets[i], y.targets[i])) return false;
        if (!adams_equal(x.critic_opts[i], y.critic_opts[i])) return false;
    }
    return adams_equal(x.policy_opt, y.policy_opt) &&
           tensors_equal(x.log_alpha, y.log_alpha) &&
           tensors_equal(x.alpha_opt.m, y.alpha_opt.m) &&
           tensors_equal(x.alpha_opt.v, y.alpha_opt.v) && x.alpha_opt.step == y.alpha_opt.step &&
           x.target_entropy == y.target_entropy && x.step == y.step;
}

Tensor rand_tensor(size_t rows, size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(rows, cols);
    for (double& x : t.data) x = rng.uniform(lo, hi);
    return t;
}

// linear net with zero weights whose bias pins the output to (mu, log_sigma)
Mlp const_head(size_t in_dim, double mu, double log_sig) {
    Rng rng(0, "const");
    Mlp net = Mlp::make({in_dim, 2}, Act::Relu, rng);
    for (double& x : net.layers[0].w.data) x = 0.0;
    net.layers[0].b.at(0, 0) = mu;
    net.layers[0].b.at(0, 1) = log_sig;
    return net;
}

// critic that always outputs the same value regardless of (s, a)
Mlp const_critic(size_t in_dim, double value) {
    Rng rng(0, "const");
    Mlp net = Mlp::make({in_dim, 4, 1}, Act::Relu, rng);
    for (Dense& d : net.layers)
        for (double& x : d.w.data) x = 0.0;
    for (double& x : net.layers[0].b.data) x = 0.0;
    net.layers[1].b.at(0, 0) = value;
    return net;
}

// exact Q(s, a) = -|a| for one action dim: |a| = relu(a) + relu(-a)
Mlp abs_penalty_critic(size_t obs_dim) {
    Rng rng(0, "abs");
    Mlp net = Mlp::make({obs_dim + 1, 2, 1}, Act::Relu, rng);
    for (Dense& d : net.layers) {
        for (double& x : d.w.data) x = 0.0;
        for (double& x : d.b.data) x = 0.0;
    }
    net.layers[0].w.at(obs_dim, 0) = 1.0;
    net.layers[0].w.at(obs_dim, 1) = -1.0;
    net.layers[1].w.at(0, 0) = -1.0;
    net.layers[1].w.at(1, 0) = -1.0;
    return net;
}

std::vector<Transition> pendulum_rows(size_t n, const PendulumParams& params, Rng& rng) {
    PendulumEnv env(params);
    std::vector<Transition> rows;
    Vec obs = env.reset(rng);
    for (size_t i = 0; i < n; ++i) {
        if (i % 25 == 0 && i > 0) obs = env.reset(rng);
        const double a = rng.uniform(-params.torque_limit, params.torque_limit);
        const PendulumEnv::StepResult sr = env.step(a);
        rows.push_back({obs, {a}, sr.reward, sr.obs, false, Source::Offline});
        obs = sr.obs;
    }
    return rows;
}

GaussianEnsemble quick_ensemble(const std::vector<Transition>& rows, uint64_t seed) {
    ModelConfig mc;
    mc.hidden = {16};
    mc.max_epochs = 3;
    mc.patience = 3;
    mc.batch = 32;
    mc.ensemble_size = 2;
    mc.n_elites = 2;
    return train_ensemble(rows, 3, 1, mc, seed);
}

double json_field(const std::string& line, const std::string& key) {
    const std::string tag = "\"" + key + "\":";
    const size_t pos = line.find(tag);
    REQUIRE(pos != std::string::npos);
    return std::stod(line.substr(pos + tag.size()));
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(line);
    return out;
}

}  // namespace

TEST_CASE("stochastic actions follow the squashed gaussian", "[agent]") {
    Policy pol;
    pol.net = const_head(1, 0.4, -0.8);
    pol.act_lo = {-3.0};
    pol.act_hi = {1.0};  // center -1, half-width 2

    Tensor obs(2, 1);
    obs.at(0, 0) = 5.0;
    obs.at(1, 0) = -2.0;

    Rng ra(21, "sample"), rb(21, "sample");
    const double e0 = rb.normal();
    const double e1 = rb.normal();
    const auto [act, logp] = pol.sample(obs, ra);

    const double sig = std::exp(-0.8);
    for (size_t r = 0; r < 2; ++r) {
        const double e = r == 0 ? e0 : e1;
        const double u = 0.4 + sig * e;
        CHECK(act.at(r, 0) == Catch::Approx(-1.0 + 2.0 * std::tanh(u)).margin(1e-15));
        // density of a = c + h*tanh(u): N(u) minus the log-Jacobian, written
        // here in the naive form as an independent cross-check
        const double naive = -0.5 * e * e - (-0.8) - 0.5 * std::log(2.0 * kPi) -
                             std::log(2.0 * (1.0 - std::tanh(u) * std::tanh(u)));
        CHECK(logp.at(r, 0) == Catch::Approx(naive).margin(1e-10));
    }

    SECTION("the stable jacobian form matches the naive one on a grid") {
        for (double u = -8.0; u <= 8.0; u += 0.37) {
            const double sp = std::max(-2.0 * u, 0.0) + std::log1p(std::exp(-std::abs(2.0 * u)));
            const double stable = 2.0 * (std::log(2.0) - u - sp);
            const double naive = std::log1p(-std::tanh(u) * std::tanh(u));
            CHECK(stable == Catch::Approx(naive).margin(1e-10));
        }
    }

    SECTION("the log-sigma clamp engages") {
        Policy tight;
        tight.net = const_head(1, 0.4, -25.0);  // below the default floor of -20
        tight.act_lo = {-3.0};
        tight.act_hi = {1.0};
        Rng rc(3, "clamp"), rd(3, "clamp");
        const auto [a2, lp2] = tight.sample(obs, rc);
        const double e = rd.normal();
        // sigma = exp(-20), not exp(-25)
        const double u = 0.4 + std::exp(-20.0) * e;
        CHECK(a2.at(0, 0) == Catch::Approx(-1.0 + 2.0 * std::tanh(u)).margin(1e-15));
        CHECK(lp2.at(0, 0) ==
              Catch::Approx(-0.5 * e * e + 20.0 - 0.5 * std::log(2.0 * kPi) - std::log(2.0) -
                            2.0 * (std::log(2.0) - u -
                                   (std::max(-2.0 * u, 0.0) +
                                    std::log1p(std::exp(-std::abs(2.0 * u))))))
                  .margin(1e-10));
        // deterministic head ignores sigma entirely
        const Tensor det = tight.act_deterministic(obs);
        CHECK(det.at(0, 0) == Catch::Approx(-1.0 + 2.0 * std::tanh(0.4)).margin(1e-15));
    }
}

TEST_CASE("the taped policy loss matches the plain sampler", "[agent]") {
    Rng init(5, "init");
    Policy pol;
    pol.net = Mlp::make({3, 8, 4}, Act::Relu, init);
    pol.act_lo = {-2.0, -1.0};
    pol.act_hi = {2.0, 3.0};

    Rng ro(9, "obs");
    const Tensor obs = rand_tensor(6, 3, ro);
    std::vector<Mlp> critics{Mlp::make({5, 6, 1}, Act::Relu, init),
                             Mlp::make({5, 6, 1}, Act::Relu, init)};

    // identical noise for both paths
    Rng r1(31, "noise"), r2(31, "noise");
    Tensor eps(6, 2);
    for (double& x : eps.data) x = r1.normal();
    const auto [act_plain, logp_plain] = pol.sample(obs, r2);

    Tape t;
    const Mlp::Staged pst = pol.net.stage(t, true);
    const detail::PolicyLossNodes nodes =
        detail::policy_loss_node(t, pol, pst, critics, obs, eps, 0.7);
    const Tensor& act_tape = t.value(nodes.action);
    const Tensor& logp_tape = t.value(nodes.logp);
    for (size_t r = 0; r < 6; ++r) {
        CHECK(logp_tape.at(r, 0) == Catch::Approx(logp_plain.at(r, 0)).margin(1e-12));
        for (size_t j = 0; j < 2; ++j)
            CHECK(act_tape.at(r, j) == Catch::Approx(act_plain.at(r, j)).margin(1e-12));
    }

    // the loss is the mean of alpha*logp - min_i Q_i at the sampled actions
    double want = 0.0;
    const Tensor sa = hstack(obs, act_plain);
    const Tensor q0 = critics[0].forward_plain(sa);
    const Tensor q1 = critics[1].forward_plain(sa);
    for (size_t r = 0; r < 6; ++r)
        want += 0.7 * logp_plain.at(r, 0) - std::min(q0.at(r, 0), q1.at(r, 0));
    want /= 6.0;
    CHECK(t.value(nodes.loss).item() == Catch::Approx(want).margin(1e-12));
}

TEST_CASE("finite differences confirm the policy-loss gradient", "[agent]") {
    Rng init(17, "init");
    Policy pol;
    pol.net = Mlp::make({2, 4, 4}, Act::Tanh, init);
    // keep the log-sigma head well inside the clamp so the loss is smooth
    for (size_t j = 2; j < 4; ++j) {
        for (size_t r = 0; r < 4; ++r) pol.net.layers.back().w.at(r, j) *= 0.1;
        pol.net.layers.back().b.at(0, j) *= 0.1;
    }
    pol.act_lo = {-1.0, -0.5};
    pol.act_hi = {1.0, 1.5};

    std::vector<Mlp> critics{Mlp::make({4, 5, 1}, Act::Tanh, init),
                             Mlp::make({4, 5, 1}, Act::Tanh, init)};
    Rng ro(23, "obs");
    const Tensor obs = rand_tensor(3, 2, ro);
    Tensor eps(3, 2);
    for (double& x : eps.data) x = ro.normal();
    const double alpha = 0.7;

    const auto loss_at = [&]() {
        Tape t;
        const Mlp::Staged st = pol.net.stage(t, true);
        return t.value(detail::policy_loss_node(t, pol, st, critics, obs, eps, alpha).loss)
            .item();
    };

    Tape t;
    const Mlp::Staged st = pol.net.stage(t, true);
    const detail::PolicyLossNodes nodes =
        detail::policy_loss_node(t, pol, st, critics, obs, eps, alpha);
    t.backward(nodes.loss);

    const double h = 1e-6;
    size_t checked = 0;
    for (size_t l = 0; l < pol.net.layers.size(); ++l) {
        for (int which = 0; which < 2; ++which) {
            Tensor& param = which == 0 ? pol.net.layers[l].w : pol.net.layers[l].b;
            const Tensor& g = t.grad(which == 0 ? st.ws[l] : st.bs[l]);
            for (size_t k = 0; k < param.data.size(); ++k) {
                const double keep = param.data[k];
                param.data[k] = keep + h;
                const double up = loss_at();
                param.data[k] = keep - h;
                const double dn = loss_at();
                param.data[k] = keep;
                const double fd = (up - dn) / (2.0 * h);
                const double denom = std::max(1e-8, std::abs(fd) + std::abs(g.data[k]));
                CHECK(std::abs(fd - g.data[k]) / denom < 1e-3);
                ++checked;
            }
        }
    }
    CHECK(checked == (2 * 4 + 4) + (4 * 4 + 4));
}

TEST_CASE("policy gradient vanishes for a constant critic at zero temperature", "[agent]") {
    Rng init(7, "init");
    Policy pol;
    pol.net = Mlp::make({2, 8, 2}, Act::Relu, init);
    pol.act_lo = {-1.0};
    pol.act_hi = {1.0};
    std::vector<Mlp> critics{const_critic(3, 0.37), const_critic(3, 0.37)};

    Rng ro(4, "obs");
    const Tensor obs = rand_tensor(5, 2, ro);
    Tensor eps(5, 1);
    for (double& x : eps.data) x = ro.normal();

    Tape t;
    const Mlp::Staged st = pol.net.stage(t, true);
    const detail::PolicyLossNodes nodes =
        detail::policy_loss_node(t, pol, st, critics, obs, eps, 0.0);
    CHECK(t.value(nodes.loss).item() == Catch::Approx(-0.37).margin(1e-12));
    t.backward(nodes.loss);
    for (size_t l = 0; l < pol.net.layers.size(); ++l) {
        for (double g : t.grad(st.ws[l]).data) CHECK(g == 0.0);
        for (double g : t.grad(st.bs[l]).data) CHECK(g == 0.0);
    }
}

TEST_CASE("the policy mean migrates to the critic argmax", "[agent]") {
    AgentConfig cfg;
    cfg.policy_hidden = {32};
    cfg.critic_hidden = {4};
    cfg.lr_policy = 5e-3;
    Rng init(11, "init");
    Agent ag = Agent::make(cfg, 3, {-2.0}, {2.0}, init);
    // push the initial mean action far from the optimum
    ag.policy.net.layers.back().b.at(0, 0) = 1.5;
    // both critics prefer a = 0 exactly: Q(s, a) = -|a|
    ag.critics = {abs_penalty_critic(3), abs_penalty_critic(3)};
    ag.log_alpha.at(0, 0) = -40.0;  // negligible entropy pressure

    Rng ro(2, "obs");
    const Tensor obs = rand_tensor(64, 3, ro);
    const auto mean_abs_action = [&]() {
        const Tensor a = ag.policy.act_deterministic(obs);
        double s = 0.0;
        for (double x : a.data) s += std::abs(x);
        return s / static_cast<double>(a.data.size());
    };

    const double before = mean_abs_action();
    REQUIRE(before > 1.2);
    Rng step(3, "steps");
    for (int i = 0; i < 500; ++i) update_policy(ag, obs, step);
    CHECK(mean_abs_action() < 0.1);
}

TEST_CASE("critic update is a no-op at the fixed point", "[agent]") {
    AgentConfig cfg;
    cfg.policy_hidden = {8};
    cfg.critic_hidden = {8};
    cfg.beta = 0.0;
    Rng init(7, "init");
    Agent ag = Agent::make(cfg, 3, {-2.0}, {2.0}, init);
    ag.critics[1] = ag.critics[0];  // a shared target needs agreeing critics
    ag.targets = ag.critics;

    std::vector<Transition> batch;
    Rng draw(11, "rows");
    for (int i = 0; i < 5; ++i) {
        Transition tr;
        tr.s = {draw.uniform(-1, 1), draw.uniform(-1, 1), draw.uniform(-1, 1)};
        tr.a = {draw.uniform(-2, 2)};
        tr.s2 = tr.s;
        tr.done = true;  // target is exactly r
        Tensor sa(1, 4);
        for (size_t j = 0; j < 3; ++j) sa.at(0, j) = tr.s[j];
        sa.at(0, 3) = tr.a[0];
        tr.r = ag.critics[0].forward_plain(sa).at(0, 0);
        batch.push_back(tr);
    }

    const Mlp before = ag.critics[0];
    Rng step(3, "step");
    const double loss = update_critics(ag, batch, nullptr, step);
    CHECK(loss == 0.0);
    CHECK(mlps_equal(ag.critics[0], before));
    CHECK(mlps_equal(ag.critics[1], before));
}

TEST_CASE("critics regress toward a fixed done-row target", "[agent]") {
    AgentConfig cfg;
    cfg.policy_hidden = {8};
    cfg.critic_hidden = {8};
    cfg.lr_critic = 1e-2;
    Rng init(19, "init");
    Agent ag = Agent::make(cfg, 3, {-2.0}, {2.0}, init);

    Transition tr;
    tr.s = {0.3, -0.7, 1.1};
    tr.a = {0.5};
    tr.s2 = tr.s;
    tr.r = 0.7;
    tr.done = true;
    Tensor sa(1, 4);
    for (size_t j = 0; j < 3; ++j) sa.at(0, j) = tr.s[j];
    sa.at(0, 3) = tr.a[0];

    const double q0 = ag.critics[0].forward_plain(sa).at(0, 0);
    const double q1 = ag.critics[1].forward_plain(sa).at(0, 0);
    Rng step(3, "step");
    const double first = update_critics(ag, {tr}, nullptr, step);
    CHECK(first ==
          Catch::Approx(((q0 - 0.7) * (q0 - 0.7) + (q1 - 0.7) * (q1 - 0.7)) / 2.0).margin(1e-12));

    double last = first;
    for (int i = 0; i < 50; ++i) last = update_critics(ag, {tr}, nullptr, step);
    CHECK(last < 0.1 * first);
    CHECK(std::abs(ag.critics[0].forward_plain(sa).at(0, 0) - 0.7) < std::abs(q0 - 0.7));
    CHECK(std::abs(ag.critics[1].forward_plain(sa).at(0, 0) - 0.7) < std::abs(q1 - 0.7));
}

TEST_CASE("temperature steps follow the closed-form gradient", "[agent]") {
    AgentConfig cfg;
    cfg.lr_alpha = 1e-2;
    Policy pol;
    pol.net = const_head(1, 0.3, -1.0);
    pol.act_lo = {-2.0};
    pol.act_hi = {2.0};

    Agent ag;
    ag.cfg = cfg;
    ag.policy = pol;
    ag.log_alpha.at(0, 0) = 0.2;

    Rng ro(6, "obs");
    const Tensor obs = rand_tensor(4, 1, ro);
    Rng r1(5, "alpha"), r2(5, "alpha");
    const auto draw = pol.sample(obs, r2);
    double mean_lp = 0.0;
    for (size_t r = 0; r < 4; ++r) mean_lp += draw.second.at(r, 0);
    mean_lp /= 4.0;

    SECTION("zero gradient at the entropy target") {
        ag.target_entropy = -mean_lp;
        update_alpha(ag, obs, r1);
        CHECK(ag.log_alpha.at(0, 0) == 0.2);
        CHECK(ag.alpha_opt.step == 1);
    }
    SECTION("alpha rises when entropy is short of the target") {
        ag.target_entropy = -mean_lp + 1.0;
        update_alpha(ag, obs, r1);
        // first Adam step has magnitude ~lr
        CHECK(ag.log_alpha.at(0, 0) == Catch::Approx(0.2 + 0.01).margin(1e-6));
    }
    SECTION("alpha falls when entropy overshoots the target") {
        ag.target_entropy = -mean_lp - 1.0;
        update_alpha(ag, obs, r1);
        CHECK(ag.log_alpha.at(0, 0) == Catch::Approx(0.2 - 0.01).margin(1e-6));
    }
}

TEST_CASE("the value target takes the elementwise critic minimum", "[agent]") {
    AgentConfig cfg;
    cfg.policy_hidden = {8};
    cfg.critic_hidden = {8};
    cfg.n_critics = 3;
    Rng init(29, "init");
    Agent ag = Agent::make(cfg, 2, {-1.0}, {1.0}, init);

    Rng ro(8, "obs");
    const Tensor obs = rand_tensor(6, 2, ro);
    const Tensor act = rand_tensor(6, 1, ro);
    const Tensor m = ag.min_target_q(obs, act);
    REQUIRE(m.rows == 6);
    REQUIRE(m.cols == 1);
    const Tensor sa = hstack(obs, act);
    for (size_t r = 0; r < 6; ++r) {
        double want = ag.targets[0].forward_plain(sa).at(r, 0);
        for (size_t i = 1; i < 3; ++i)
            want = std::min(want, ag.targets[i].forward_plain(sa).at(r, 0));
        CHECK(m.at(r, 0) == want);
    }
}

TEST_CASE("agent checkpoints round-trip", "[agent]") {
    AgentConfig cfg;
    cfg.policy_hidden = {8};
    cfg.critic_hidden = {8};
    Rng init(41, "init");
    Agent ag = Agent::make(cfg, 3, {-2.0}, {2.0}, init);

    // dirty the optimizer states and counters before the round-trip
    Transition tr;
    tr.s = {0.1, 0.2, 0.3};
    tr.a = {0.4};
    tr.s2 = tr.s;
    tr.r = 0.5;
    tr.done = true;
    Rng step(3, "step");
    update_critics(ag, {tr}, nullptr, step);
    Tensor obs(1, 3);
    obs.at(0, 0) = 0.1;
    obs.at(0, 1) = 0.2;
    obs.at(0, 2) = 0.3;
    update_policy(ag, obs, step);
    update_alpha(ag, obs, step);
    ag.step = 3;

    const std::string path = temp_path("agent_roundtrip.ckpt");
    Checkpoint ck;
    save_agent(ck, ag);
    ck.save(path);
    const Checkpoint back = Checkpoint::load(path);
    const Agent bg = load_agent(back, cfg);
    CHECK(agents_equal(ag, bg));
    CHECK(bg.policy.act_lo == ag.policy.act_lo);
    CHECK(bg.policy.act_hi == ag.policy.act_hi);
    CHECK(bg.policy.log_sig_lo == ag.policy.log_sig_lo);

    // behavior carries over: identical draws give identical actions
    Rng sa(13, "probe"), sb(13, "probe");
    const auto da = ag.policy.sample(obs, sa);
    const auto db = bg.policy.sample(obs, sb);
    CHECK(tensors_equal(da.first, db.first));
    CHECK(tensors_equal(da.second, db.second));

    AgentConfig wrong = cfg;
    wrong.n_critics = 3;
    CHECK_THROWS_AS(load_agent(back, wrong), std::invalid_argument);
    std::remove(path.c_str());
}

TEST_CASE("evaluation is a pure function of the rng stream", "[agent]") {
    AgentConfig cfg;
    cfg.policy_hidden = {8};
    cfg.critic_hidden = {8};
    Rng init(3, "init");
    const PendulumParams params;
    Agent ag = Agent::make(cfg, 3, {-params.torque_limit}, {params.torque_limit}, init);

    Rng e1(4, "eval"), e2(4, "eval");
    const EvalStats s1 = evaluate_policy(ag.policy, params, 3, 40, e1);
    const EvalStats s2 = evaluate_policy(ag.policy, params, 3, 40, e2);
    CHECK(s1.mean == s2.mean);
    CHECK(s1.stddev == s2.stddev);
    CHECK(s1.stddev >= 0.0);
    // per-step pendulum cost is bounded
    CHECK(s1.mean <= 0.0);
    CHECK(s1.mean >= -17.0 * 40.0);
}

TEST_CASE("zero beta training ignores the model entirely", "[agent]") {
    const PendulumParams params;
    Rng data_rng(51, "data");
    const std::vector<Transition> data = pendulum_rows(120, params, data_rng);
    const GaussianEnsemble ens_a = quick_ensemble(data, 1);
    const GaussianEnsemble ens_b = quick_ensemble(data, 2);
    REQUIRE_FALSE(mlps_equal(ens_a.models[0], ens_b.models[0]));

    AgentConfig cfg;
    cfg.policy_hidden = {8};
    cfg.critic_hidden = {8};
    cfg.batch = 16;
    cfg.n_iter = 8;
    cfg.rollout_interval = 4;
    cfg.rollout_batch = 4;
    cfg.rollout_horizon = 2;
    cfg.real_fraction = 1.0;  // update batches never touch the model pool
    cfg.beta = 0.0;           // targets never touch the ensemble
    cfg.eval_interval = 0;

    const Agent run_a = train(cfg, data, ens_a, params, 42);
    const Agent run_b = train(cfg, data, ens_b, params, 42);
    CHECK(agents_equal(run_a, run_b));
    CHECK(run_a.step == 8);
}

TEST_CASE("training with zero iterations returns the freshly initialized agent", "[agent]") {
    const PendulumParams params;
    Rng data_rng(52, "data");
    const std::vector<Transition> data = pendulum_rows(60, params, data_rng);
    const GaussianEnsemble ens = quick_ensemble(data, 1);

    AgentConfig cfg;
    cfg.policy_hidden = {8};
    cfg.critic_hidden = {8};
    cfg.n_iter = 0;

    const Agent got = train(cfg, data, ens, params, 9);
    RngSet rngs(9);
    const Agent want =
        Agent::make(cfg, 3, Vec(1, -params.torque_limit), Vec(1, params.torque_limit), rngs.agent);
    CHECK(agents_equal(got, want));
}

TEST_CASE("a short training run emits metrics and stays finite", "[agent]") {
    const PendulumParams params;
    Rng data_rng(53, "data");
    const std::vector<Transition> data = pendulum_rows(100, params, data_rng);
    const GaussianEnsemble ens = quick_ensemble(data, 4);

    AgentConfig cfg;
    cfg.policy_hidden = {16};
    cfg.critic_hidden = {16};
    cfg.batch = 24;
    cfg.n_iter = 20;
    cfg.rollout_interval = 5;
    cfg.rollout_batch = 8;
    cfg.rollout_horizon = 3;
    cfg.real_fraction = 0.5;
    cfg.beta = 0.5;
    cfg.eval_interval = 10;
    cfg.eval_episodes = 2;
    cfg.eval_horizon = 30;

    std::ostringstream ms;
    const Agent ag = train(cfg, data, ens, params, 7, &ms);
    CHECK(ag.step == 20);
    CHECK(std::isfinite(ag.alpha()));
    CHECK(ag.alpha() > 0.0);

    const std::vector<std::string> rows = lines_of(ms.str());
    REQUIRE(rows.size() == 2);
    CHECK(json_field(rows[0], "step") == 10.0);
    CHECK(json_field(rows[1], "step") == 20.0);
    for (const std::string& row : rows) {
        CHECK(std::isfinite(json_field(row, "critic_loss")));
        CHECK(std::isfinite(json_field(row, "policy_loss")));
        CHECK(json_field(row, "alpha") > 0.0);
        CHECK(std::isfinite(json_field(row, "mean_f")));
        CHECK(json_field(row, "model_fraction") > 0.0);
        CHECK(json_field(row, "eval_return_mean") <= 0.0);
        CHECK(json_field(row, "eval_return_std") >= 0.0);
    }
}

TEST_CASE("resuming from a checkpoint matches the uninterrupted run", "[agent]") {
    const PendulumParams params;
    Rng data_rng(54, "data");
    const std::vector<Transition> data = pendulum_rows(80, params, data_rng);
    const GaussianEnsemble ens = quick_ensemble(data, 5);

    AgentConfig cfg;
    cfg.policy_hidden = {8};
    cfg.critic_hidden = {8};
    cfg.batch = 12;
    cfg.n_iter = 12;
    cfg.rollout_interval = 5;
    cfg.rollout_batch = 4;
    cfg.rollout_horizon = 2;
    cfg.real_fraction = 0.5;
    cfg.beta = 0.3;
    cfg.eval_interval = 3;
    cfg.eval_episodes = 2;
    cfg.eval_horizon = 15;
    cfg.model_buffer_capacity = 20;  // three rollouts of 8 rows force a wrap

    std::ostringstream m_full;
    const Agent full = train(cfg, data, ens, params, 99, &m_full);

    const std::string path = temp_path("agent_resume.ckpt");
    AgentConfig head = cfg;
    head.n_iter = 6;
    std::ostringstream m_head;
    train(head, data, ens, params, 99, &m_head, path, 6);
    std::ostringstream m_tail;
    const Agent resumed = train(cfg, data, ens, params, 99, &m_tail, "", 0, path);

    CHECK(agents_equal(full, resumed));
    CHECK(resumed.step == 12);
    CHECK(m_full.str() == m_head.str() + m_tail.str());
    std::remove(path.c_str());
}

TEST_CASE("agent configuration and inputs are validated", "[agent]") {
    Rng init(1, "init");
    AgentConfig bad;

    bad = AgentConfig{};
    bad.gamma = 1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = AgentConfig{};
    bad.tau = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = AgentConfig{};
    bad.n_critics = 1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = AgentConfig{};
    bad.real_fraction = 1.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = AgentConfig{};
    bad.beta = -0.1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = AgentConfig{};
    bad.lr_policy = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    AgentConfig cfg;
    cfg.policy_hidden = {4};
    cfg.critic_hidden = {4};
    CHECK_THROWS_AS(Agent::make(cfg, 0, {-1.0}, {1.0}, init), std::invalid_argument);
    CHECK_THROWS_AS(Agent::make(cfg, 2, {1.0}, {1.0}, init), std::invalid_argument);

    Agent ag = Agent::make(cfg, 2, {-1.0}, {1.0}, init);
    Rng step(2, "step");
    CHECK_THROWS_AS(update_critics(ag, {}, nullptr, step), std::invalid_argument);
    const Tensor wide = rand_tensor(2, 3, init);
    CHECK_THROWS_AS(update_policy(ag, wide, step), std::invalid_argument);
    CHECK_THROWS_AS(update_alpha(ag, wide, step), std::invalid_argument);

    const PendulumParams params;
    Rng data_rng(55, "data");
    const std::vector<Transition> data = pendulum_rows(40, params, data_rng);
    const GaussianEnsemble ens = quick_ensemble(data, 6);
    CHECK_THROWS_AS(train(cfg, {}, ens, params, 1), std::invalid_argument);
    GaussianEnsemble narrow = ens;
    narrow.obs_dim = 2;
    CHECK_THROWS_AS(train(cfg, data, narrow, params, 1), std::invalid_argument);
}
