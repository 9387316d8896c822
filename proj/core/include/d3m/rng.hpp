#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace d3m {

// Deterministic random streams for the whole pipeline.
//
// All randomness flows from one master seed. Independent streams are derived
// by key (purpose tag + index) rather than by sequential draws, so units of
// work (calibration rounds, evaluation shards, per-input sample blocks) can
// run in any order, or in parallel, and still reproduce the sequential result
// bit for bit.
//
// The engine is xoshiro256++ seeded through splitmix64. Gaussian samples use
// the Box-Muller cosine branch, one sample per call with no carried state, so
// the stream position after k calls is a pure function of k. Implementation-
// defined std::distributions are deliberately not used.

uint64_t splitmix64(uint64_t& state);

// Key-derivation for child streams: fold a tag into a seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag) {
    uint64_t s = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
    return splitmix64(s);
}

class Rng {
public:
    explicit Rng(uint64_t seed = 0);

    uint64_t next_u64();

    // Uniform on [0, 1), 53-bit resolution.
    double uniform();
    // Uniform on [lo, hi).
    double uniform(double lo, double hi);
    // Uniform integer in [0, n), n >= 1. Unbiased (rejection).
    uint64_t uniform_index(uint64_t n);
    // Standard normal, Box-Muller cosine branch (consumes two uniforms).
    double normal();

    // Derive an independent child stream keyed by (tag, index).
    Rng child(uint64_t tag, uint64_t index = 0) const;

    // In-place Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    uint64_t seed_of() const { return seed_; }

private:
    uint64_t state_[4];
    uint64_t seed_; // seed this stream was constructed from, for child derivation
};

} // namespace d3m
