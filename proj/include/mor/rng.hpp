#pragma once

#include <cstdint>

#include "mor/matrix.hpp"

namespace mor {

// Deterministic 64-bit generator: splitmix64 recurrence feeding a
// rejection-free Box-Muller transform. The same seed yields the same stream
// on every run; all randomness in the project flows through this type.
struct RngState {
    std::uint64_t state = 0;

    RngState() = default;
    explicit RngState(std::uint64_t seed) : state(seed) {}

    std::uint64_t next_u64();

    // Uniform in the open interval (0,1); safe to feed into log().
    double next_uniform();
    double next_uniform(double lo, double hi);

    // One normal draw consumes exactly two uniforms (cosine branch only),
    // so the stream position never depends on caller-side pairing.
    double next_gaussian(double mean, double stddev);

    // Independent derived stream; advances this one by a single draw.
    RngState fork(std::uint64_t tag);
};

Matrix rng_gaussian_matrix(RngState& rng, std::size_t rows, std::size_t cols,
                           double mean, double stddev);
Vector rng_gaussian_vector(RngState& rng, std::size_t len, double mean, double stddev);

}  // namespace mor
