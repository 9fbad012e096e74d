#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "micro/checkpoint.hpp"

using namespace micro;

namespace {
std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("tensor round trip is bit exact") {
    Checkpoint ck;
    Tensor t(2, 3);
    t.data = {0.1 / 3.0, -0.0, 1e300, 5e-324, -1.0 / 7.0, 42.0};
    ck.put("weights", t);
    const std::string path = temp_path("ckpt_tensor.bin");
    ck.save(path);
    const Checkpoint back = Checkpoint::load(path);
    const Tensor& r = back.tensor("weights");
    REQUIRE(r.rows == 2);
    REQUIRE(r.cols == 3);
    for (size_t i = 0; i < t.data.size(); ++i) {
        // compare raw bit patterns, not values, so -0.0 and denormals count
        uint64_t a, b;
        std::memcpy(&a, &t.data[i], 8);
        std::memcpy(&b, &r.data[i], 8);
        REQUIRE(a == b);
    }
    std::remove(path.c_str());
}

TEST_CASE("u64 arrays and rng states round trip") {
    Checkpoint ck;
    Rng rng(77, "agent");
    for (int i = 0; i < 13; ++i) rng.raw64();
    ck.put_rng("rng.agent", rng);
    ck.put_count("iter", 123456789ULL);
    ck.put_u64("raw", {0ULL, ~0ULL, 0xdeadbeefULL});

    const std::string path = temp_path("ckpt_u64.bin");
    ck.save(path);
    const Checkpoint back = Checkpoint::load(path);

    Rng restored = back.rng("rng.agent");
    for (int i = 0; i < 32; ++i) REQUIRE(restored.raw64() == rng.raw64());
    CHECK(back.count("iter") == 123456789ULL);
    CHECK(back.u64s("raw") == std::vector<uint64_t>({0ULL, ~0ULL, 0xdeadbeefULL}));
    std::remove(path.c_str());
}

TEST_CASE("mlp and adam round trip preserve behaviour") {
    Rng rng(5, "net");
    Mlp net = Mlp::make({3, 8, 2}, Act::Tanh, rng);
    MlpAdam opt(net);
    // push the optimizer away from its zero state
    Tensor x(4, 3);
    for (double& v : x.data) v = rng.uniform(-1.0, 1.0);
    for (int i = 0; i < 3; ++i) {
        Tape t;
        const auto st = net.stage(t, true);
        t.backward(t.mean_all(t.square(net.forward(t, st, t.input(x)))));
        opt.apply(net, t, st, 1e-3);
    }

    Checkpoint ck;
    ck.put_mlp("policy", net);
    ck.put_adam("policy.opt", opt);
    const std::string path = temp_path("ckpt_mlp.bin");
    ck.save(path);
    const Checkpoint back = Checkpoint::load(path);

    const Mlp net2 = back.mlp("policy");
    const MlpAdam opt2 = back.adam("policy.opt");
    REQUIRE(net2.layers.size() == net.layers.size());
    CHECK(net2.hidden_act == net.hidden_act);
    const Tensor y1 = net.forward_plain(x);
    const Tensor y2 = net2.forward_plain(x);
    for (size_t i = 0; i < y1.data.size(); ++i) REQUIRE(y1.data[i] == y2.data[i]);
    REQUIRE(opt2.ws.size() == opt.ws.size());
    CHECK(opt2.ws[0].step == opt.ws[0].step);
    for (size_t i = 0; i < opt.ws[0].m.data.size(); ++i)
        REQUIRE(opt2.ws[0].m.data[i] == opt.ws[0].m.data[i]);
    std::remove(path.c_str());
}

TEST_CASE("record names keep insertion order") {
    Checkpoint ck;
    ck.put_scalar("zeta", 1.0);
    ck.put_scalar("alpha", 2.0);
    ck.put_scalar("mid", 3.0);
    CHECK(ck.names() == std::vector<std::string>({"zeta", "alpha", "mid"}));
    CHECK(ck.has("alpha"));
    CHECK_FALSE(ck.has("beta"));
}

TEST_CASE("lookup and type errors are loud") {
    Checkpoint ck;
    ck.put_scalar("x", 1.0);
    ck.put_u64("n", {4});
    CHECK_THROWS_AS(ck.tensor("missing"), std::runtime_error);
    CHECK_THROWS_AS(ck.tensor("n"), std::runtime_error);
    CHECK_THROWS_AS(ck.u64s("x"), std::runtime_error);
    CHECK_THROWS_AS(ck.count("n2"), std::runtime_error);
}

TEST_CASE("malformed files are rejected") {
    const std::string path = temp_path("ckpt_bad.bin");
    {
        std::ofstream out(path, std::ios::binary);
        out << "not a checkpoint at all";
    }
    CHECK_THROWS_AS(Checkpoint::load(path), std::runtime_error);
    CHECK_THROWS_AS(Checkpoint::load(temp_path("ckpt_nonexistent.bin")), std::runtime_error);

    // truncated: valid magic then garbage count
    {
        std::ofstream out(path, std::ios::binary);
        out.write("MICROCK1", 8);
        const uint64_t n = 3;
        out.write(reinterpret_cast<const char*>(&n), 8);
    }
    CHECK_THROWS_AS(Checkpoint::load(path), std::runtime_error);
    std::remove(path.c_str());
}
