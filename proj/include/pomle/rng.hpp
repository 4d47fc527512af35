#pragma once

#include <cstdint>
#include <random>

namespace pomle {

// Deterministic per-replica RNG streams. Each replica derives its own
// generator from (master_seed, stream_index) through a splitmix64 mix,
// so replicas can run in parallel and still reproduce bit-identically.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class RngStream {
public:
    RngStream(std::uint64_t master_seed, std::uint64_t stream_index = 0) {
        std::uint64_t s = master_seed;
        (void)splitmix64(s);
        s ^= 0x9e3779b97f4a7c15ULL * (stream_index + 1);
        std::seed_seq seq{static_cast<std::uint32_t>(s),
                          static_cast<std::uint32_t>(s >> 32),
                          static_cast<std::uint32_t>(stream_index),
                          static_cast<std::uint32_t>(master_seed),
                          static_cast<std::uint32_t>(master_seed >> 32)};
        gen_.seed(seq);
    }

    double normal() { return normal_(gen_); }
    double uniform() { return uniform_(gen_); }
    // Uniform integer in [0, n).
    std::uint64_t index(std::uint64_t n) {
        return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(gen_);
    }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace pomle
