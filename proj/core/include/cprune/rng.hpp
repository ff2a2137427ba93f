#pragma once

#include <cstdint>
#include <vector>

namespace cprune {

/// Deterministic random number generator: xoshiro256++ seeded through
/// splitmix64. Both algorithms are fully specified integer arithmetic, so a
/// given seed yields the same u64 / uniform stream on every platform.
/// normal() maps uniforms through Box-Muller (libm sin/cos/log/sqrt), which is
/// deterministic per platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }

    /// Next raw 64-bit word of the stream.
    std::uint64_t next_u64();

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform();

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi);

    /// Uniform integer in [0, n). n must be > 0. Unbiased (rejection).
    std::uint64_t below(std::uint64_t n);

    /// Standard normal deviate (Box-Muller; the second deviate of each pair
    /// is cached, so draws come in a fixed order).
    double normal();

    /// Fisher-Yates shuffle driven by below().
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t state_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// splitmix64 finalizer; the seed-expansion primitive used by Rng.
std::uint64_t splitmix64(std::uint64_t& state);

/// Derives an independent stream seed from a base seed and a tag. Used to
/// give sub-tasks (grid cells, selector draws) their own streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

}  // namespace cprune
