#include "mor/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace mor {

std::uint64_t RngState::next_u64() {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double RngState::next_uniform() {
    // 53 random bits, offset by half an ulp so 0 and 1 are unreachable.
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngState::next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_uniform();
}

double RngState::next_gaussian(double mean, double stddev) {
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double n = std::sqrt(-2.0 * std::log(u1)) *
                     std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
    return mean + stddev * n;
}

RngState RngState::fork(std::uint64_t tag) {
    return RngState(next_u64() ^ (tag * 0xD1B54A32D192ED03ULL));
}

Matrix rng_gaussian_matrix(RngState& rng, std::size_t rows, std::size_t cols,
                           double mean, double stddev) {
    if (stddev < 0.0)
        throw std::invalid_argument("rng_gaussian_matrix: negative stddev");
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.next_gaussian(mean, stddev);
    return m;
}

Vector rng_gaussian_vector(RngState& rng, std::size_t len, double mean, double stddev) {
    if (stddev < 0.0)
        throw std::invalid_argument("rng_gaussian_vector: negative stddev");
    Vector v(len);
    for (std::size_t i = 0; i < len; ++i) v[i] = rng.next_gaussian(mean, stddev);
    return v;
}

}  // namespace mor
