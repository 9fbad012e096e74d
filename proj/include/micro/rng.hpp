#pragma once

// Deterministic random number generation. Every stochastic component of the
// pipeline draws from its own named stream so that adding draws to one
// component never perturbs another, and so a run can be resumed bit-exactly
// from a checkpoint. xoshiro256++ with splitmix64 seeding; identical output
// on every platform (no reliance on std:: distribution implementations).

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "micro/common.hpp"

namespace micro {

inline uint64_t splitmix64_next(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// FNV-1a over a byte string; used to derive per-stream seeds from names
/// and to assign dataset rows to holdout folds by content.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

class Rng {
  public:
    Rng() : Rng(0, "") {}

    /// Seed from a run seed and a stream name. Distinct names give
    /// decorrelated streams for the same run seed.
    Rng(uint64_t seed, const std::string& stream) {
        uint64_t sm = seed ^ fnv1a64(stream);
        for (auto& word : state_) word = splitmix64_next(sm);
    }

    uint64_t raw64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(raw64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    uint64_t below(uint64_t n) {
        require_arg(n > 0, "Rng::below: n must be positive");
        // Multiply-shift rejection-free mapping is biased for huge n; the
        // buffer sizes used here are far below 2^32 so modulo bias is < 2^-32.
        return raw64() % n;
    }

    /// Standard normal via Box-Muller. No cached spare: one draw consumes
    /// two uniforms, keeping the stream position independent of call parity.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::array<uint64_t, 4> state() const { return state_; }
    void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

  private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<uint64_t, 4> state_{};
};

/// The named streams used by a training run. Kept together so checkpointing
/// can serialize all of them in a fixed order.
struct RngSet {
    Rng model;    // ensemble init + minibatch sampling for model fitting
    Rng agent;    // network init + SAC minibatch sampling + action noise
    Rng rollout;  // model rollout branching
    Rng eval;     // evaluation episode starts
    Rng attack;   // attack candidate perturbations

    explicit RngSet(uint64_t seed = 0)
        : model(seed, "model"),
          agent(seed, "agent"),
          rollout(seed, "rollout"),
          eval(seed, "eval"),
          attack(seed, "attack") {}
};

}  // namespace micro
