#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <functional>
#include <vector>

#include "micro/nn.hpp"
#include "micro/rng.hpp"
#include "micro/tape.hpp"
#include "micro/tensor.hpp"

using namespace micro;

namespace {

using GraphFn = std::function<Tape::NodeId(Tape&, const std::vector<Tape::NodeId>&)>;

double eval_scalar(const GraphFn& f, const std::vector<Tensor>& params) {
    Tape t;
    std::vector<Tape::NodeId> ids;
    for (const Tensor& p : params) ids.push_back(t.param(p));
    return t.value(f(t, ids)).item();
}

/// Compare tape gradients of a scalar-valued graph against central finite
/// differences, elementwise over every parameter.
void check_gradients(const GraphFn& f, std::vector<Tensor> params, double tol = 1e-4) {
    Tape t;
    std::vector<Tape::NodeId> ids;
    for (const Tensor& p : params) ids.push_back(t.param(p));
    const Tape::NodeId loss = f(t, ids);
    t.backward(loss);
    for (size_t pi = 0; pi < params.size(); ++pi) {
        const Tensor analytic = t.grad(ids[pi]);
        for (size_t j = 0; j < params[pi].data.size(); ++j) {
            const double x = params[pi].data[j];
            const double eps = 1e-6 * std::max(1.0, std::abs(x));
            params[pi].data[j] = x + eps;
            const double lp = eval_scalar(f, params);
            params[pi].data[j] = x - eps;
            const double lm = eval_scalar(f, params);
            params[pi].data[j] = x;
            const double fd = (lp - lm) / (2.0 * eps);
            const double a = analytic.data[j];
            if (std::abs(a - fd) < 1e-8) continue;  // both vanish up to FD roundoff
            const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
            INFO("param " << pi << " element " << j << " analytic " << a << " fd " << fd);
            REQUIRE(rel < tol);
        }
    }
}

Tensor random_tensor(Rng& rng, size_t r, size_t c, double lo = -2.0, double hi = 2.0) {
    Tensor t(r, c);
    for (double& x : t.data) x = rng.uniform(lo, hi);
    return t;
}

/// Random tensor with every entry at least `margin` away from the points in
/// `kinks`; keeps finite differences off non-differentiable corners.
Tensor random_away_from(Rng& rng, size_t r, size_t c, const std::vector<double>& kinks,
                        double margin = 1e-2) {
    Tensor t(r, c);
    for (double& x : t.data) {
        for (;;) {
            x = rng.uniform(-2.0, 2.0);
            bool ok = true;
            for (double k : kinks) ok = ok && std::abs(x - k) > margin;
            if (ok) break;
        }
    }
    return t;
}

}  // namespace

TEST_CASE("matmul forward matches a hand computation") {
    Tape t;
    Tensor a(2, 3);
    a.data = {1, 2, 3, 4, 5, 6};
    Tensor b(3, 2);
    b.data = {7, 8, 9, 10, 11, 12};
    const auto c = t.matmul(t.input(a), t.input(b));
    const Tensor& v = t.value(c);
    REQUIRE(v.rows == 2);
    REQUIRE(v.cols == 2);
    CHECK(v.at(0, 0) == Catch::Approx(58.0));
    CHECK(v.at(0, 1) == Catch::Approx(64.0));
    CHECK(v.at(1, 0) == Catch::Approx(139.0));
    CHECK(v.at(1, 1) == Catch::Approx(154.0));
}

TEST_CASE("shape mismatches throw") {
    Tape t;
    const auto a = t.input(Tensor(2, 3));
    const auto b = t.input(Tensor(2, 3));
    const auto c = t.input(Tensor(3, 3));
    CHECK_THROWS_AS(t.matmul(a, b), std::invalid_argument);
    CHECK_THROWS_AS(t.add(a, c), std::invalid_argument);
    CHECK_THROWS_AS(t.concat_cols(a, t.input(Tensor(4, 1))), std::invalid_argument);
    CHECK_THROWS_AS(t.slice_cols(a, 2, 2), std::invalid_argument);
    CHECK_THROWS_AS(t.clamp(a, 1.0, -1.0), std::invalid_argument);
}

TEST_CASE("backward demands a scalar loss that depends on a param") {
    Tape t;
    const auto x = t.param(Tensor(2, 2, 1.0));
    CHECK_THROWS_AS(t.backward(t.add(x, x)), std::runtime_error);
    const auto c = t.input(Tensor::scalar(3.0));
    CHECK_THROWS_AS(t.backward(c), std::runtime_error);
}

TEST_CASE("every differentiable op passes a finite difference check") {
    // The acceptance bar for the autodiff layer: analytic vs central
    // differences, relative error < 1e-4, across 100 random seeds.
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed, "fd");

        SECTION("seed " + std::to_string(seed)) {}  // label only

        // matmul + add_rowvec
        check_gradients(
            [](Tape& t, const std::vector<Tape::NodeId>& p) {
                return t.mean_all(t.square(t.add_rowvec(t.matmul(p[0], p[1]), p[2])));
            },
            {random_tensor(rng, 3, 4), random_tensor(rng, 4, 2), random_tensor(rng, 1, 2)});

        // add / sub / mul chain
        check_gradients(
            [](Tape& t, const std::vector<Tape::NodeId>& p) {
                return t.mean_all(t.mul(t.add(p[0], p[1]), t.sub(p[0], p[1])));
            },
            {random_tensor(rng, 3, 3), random_tensor(rng, 3, 3)});

        // minimum (inputs kept apart so the argmin is FD-stable)
        {
            Tensor a = random_tensor(rng, 4, 3);
            Tensor b = random_tensor(rng, 4, 3);
            for (size_t i = 0; i < a.data.size(); ++i)
                if (std::abs(a.data[i] - b.data[i]) < 1e-2) b.data[i] += 0.05;
            check_gradients(
                [](Tape& t, const std::vector<Tape::NodeId>& p) {
                    return t.mean_all(t.square(t.minimum(p[0], p[1])));
                },
                {a, b});
        }

        // scale / add_scalar / neg
        check_gradients(
            [](Tape& t, const std::vector<Tape::NodeId>& p) {
                return t.sum_all(t.neg(t.add_scalar(t.scale(p[0], 0.7), -0.3)));
            },
            {random_tensor(rng, 2, 5)});

        // relu away from the kink
        check_gradients(
            [](Tape& t, const std::vector<Tape::NodeId>& p) {
                return t.mean_all(t.square(t.relu(p[0])));
            },
            {random_away_from(rng, 3, 4, {0.0})});

        // tanh, exp, softplus, square
        check_gradients(
            [](Tape& t, const std::vector<Tape::NodeId>& p) {
                return t.mean_all(t.add(t.tanh(p[0]), t.mul(t.exp(p[1]), t.softplus(p[1]))));
            },
            {random_tensor(rng, 3, 3), random_tensor(rng, 3, 3)});

        // log on positive inputs
        check_gradients(
            [](Tape& t, const std::vector<Tape::NodeId>& p) {
                return t.sum_all(t.log(p[0]));
            },
            {random_tensor(rng, 2, 3, 0.2, 3.0)});

        // clamp away from its boundaries
        check_gradients(
            [](Tape& t, const std::vector<Tape::NodeId>& p) {
                return t.mean_all(t.square(t.clamp(p[0], -1.0, 1.0)));
            },
            {random_away_from(rng, 3, 4, {-1.0, 1.0})});

        // concat + slice round trip
        check_gradients(
            [](Tape& t, const std::vector<Tape::NodeId>& p) {
                const auto cat = t.concat_cols(p[0], p[1]);
                return t.mean_all(t.square(t.slice_cols(cat, 1, 4)));
            },
            {random_tensor(rng, 3, 2), random_tensor(rng, 3, 3)});

        // reductions
        check_gradients(
            [](Tape& t, const std::vector<Tape::NodeId>& p) {
                return t.mean_all(t.square(t.sum_cols(p[0])));
            },
            {random_tensor(rng, 4, 3)});
        check_gradients(
            [](Tape& t, const std::vector<Tape::NodeId>& p) {
                return t.scale(t.sum_all(t.square(p[0])), 0.5);
            },
            {random_tensor(rng, 2, 2)});
    }
}

TEST_CASE("whole-network gradient agrees with finite differences") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed, "mlpfd");
        Mlp net = Mlp::make({3, 8, 8, 2}, Act::Relu, rng);
        const Tensor x = random_tensor(rng, 4, 3);
        const Tensor target = random_tensor(rng, 4, 2);
        std::vector<Tensor> params;
        for (const Dense& d : net.layers) {
            params.push_back(d.w);
            params.push_back(d.b);
        }
        const size_t nl = net.layers.size();
        check_gradients(
            [&, nl](Tape& t, const std::vector<Tape::NodeId>& p) {
                Tape::NodeId h = t.input(x);
                for (size_t i = 0; i < nl; ++i) {
                    h = t.add_rowvec(t.matmul(h, p[2 * i]), p[2 * i + 1]);
                    if (i + 1 < nl) h = t.relu(h);
                }
                return t.mean_all(t.square(t.sub(h, t.input(target))));
            },
            params, 2e-4);
    }
}

TEST_CASE("minimum routes ties to the first argument") {
    Tape t;
    const auto a = t.param(Tensor(1, 2, 1.0));
    const auto b = t.param(Tensor(1, 2, 1.0));
    t.backward(t.sum_all(t.minimum(a, b)));
    CHECK(t.grad(a).data[0] == 1.0);
    CHECK(t.grad(b).data[0] == 0.0);
}

TEST_CASE("clamp zeroes gradients outside the interval") {
    Tape t;
    Tensor x(1, 3);
    x.data = {-2.0, 0.5, 2.0};
    const auto p = t.param(x);
    t.backward(t.sum_all(t.clamp(p, -1.0, 1.0)));
    CHECK(t.grad(p).data[0] == 0.0);
    CHECK(t.grad(p).data[1] == 1.0);
    CHECK(t.grad(p).data[2] == 0.0);
}

TEST_CASE("constant-staged branches contribute no gradient work") {
    Tape t;
    Tensor w(2, 2, 0.5);
    const auto x = t.param(Tensor(1, 2, 1.0));
    const auto c = t.input(w);
    const auto y = t.matmul(x, c);
    t.backward(t.mean_all(t.square(y)));
    CHECK_THROWS_AS(t.grad(c), std::runtime_error);
    CHECK(t.grad(x).data[0] != 0.0);
}

TEST_CASE("gradients accumulate across fan-out") {
    // loss = sum(x*x) via two paths: d/dx = 2x
    Tape t;
    Tensor x(1, 3);
    x.data = {1.0, -2.0, 3.0};
    const auto p = t.param(x);
    t.backward(t.sum_all(t.mul(p, p)));
    CHECK(t.grad(p).data[0] == Catch::Approx(2.0));
    CHECK(t.grad(p).data[1] == Catch::Approx(-4.0));
    CHECK(t.grad(p).data[2] == Catch::Approx(6.0));
}
