#pragma once

#include <cstdint>
#include <string_view>

namespace pd {

/// xoshiro256** seeded through splitmix64. Hand-rolled so that streams are
/// bit-identical across compilers and standard libraries; every random choice
/// in the project flows through this type.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi);

    /// Standard normal via Box-Muller (second value cached).
    double normal();

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);

private:
    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Stable sub-stream seed: hash of (base, tag, index). Used so that stages,
/// groups and evaluation draws are independent of each other's consumption.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index = 0);

} // namespace pd
