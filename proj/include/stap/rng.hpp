#pragma once

#include <cstdint>
#include <random>

#include "stap/tensor.hpp"

namespace stap {

/// splitmix64 step; used to derive independent sub-stream seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d49fbb133111ebULL;
    return z ^ (z >> 31);
}

/// Deterministic seed for stream `stream_id` under root seed `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream_id) {
    std::uint64_t s = seed ^ (0x100000001b3ULL * (stream_id + 1));
    std::uint64_t a = splitmix64(s);
    std::uint64_t b = splitmix64(s);
    return a ^ (b << 1);
}

/// Seeded random source; every stochastic component owns one so streams
/// never interleave across modules.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(eng_);
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(eng_);
    }

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(eng_);
    }

    template <typename It>
    void shuffle(It first, It last) {
        std::shuffle(first, last, eng_);
    }

    Tensor normal_tensor(std::vector<std::size_t> shape, double mean = 0.0,
                         double stddev = 1.0) {
        Tensor t(std::move(shape));
        for (double& x : t.v) x = normal(mean, stddev);
        return t;
    }

    Tensor uniform_tensor(std::vector<std::size_t> shape, double lo, double hi) {
        Tensor t(std::move(shape));
        for (double& x : t.v) x = uniform(lo, hi);
        return t;
    }

    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
};

/// fan-in scaled uniform init, +-1/sqrt(fan_in).
inline Tensor init_weight(Rng& rng, std::size_t rows, std::size_t cols) {
    double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    return rng.uniform_tensor({rows, cols}, -bound, bound);
}

}  // namespace stap
