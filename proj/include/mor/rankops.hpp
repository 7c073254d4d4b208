#pragma once

#include <cstddef>
#include <vector>

#include "mor/matrix.hpp"

namespace mor {

// Contiguous slab partition of a rank-r product: block i holds columns
// [i*r/n, (i+1)*r/n) of B and the matching rows of A.
struct RankBlock {
    Matrix b;  // d x (r/n)
    Matrix a;  // (r/n) x h
};

struct BlockSplit {
    std::size_t n_blocks = 0;
    std::vector<RankBlock> blocks;
};

struct TruncationCurve {
    std::vector<std::size_t> ranks;  // 0..min(d,h)
    std::vector<double> errors;      // squared Frobenius residual per rank
};

// Requires n to divide b.cols() (= a.rows()).
BlockSplit block_split(const Matrix& b, const Matrix& a, std::size_t n);

// Sum of per-block products; equals the full product up to reassociation.
Matrix block_reconstruct(const BlockSplit& split);

// Weighted sum over the k largest-weight blocks (ties to the lowest index).
// Selected weights are renormalized to sum 1; with k = n the given simplex
// weights are used as-is.
Matrix sparse_mix(const BlockSplit& split, const Vector& g, std::size_t k);

// errors[r] is the squared Frobenius distance to the best rank-r
// approximation, i.e. the suffix sum of squared singular values past r.
TruncationCurve truncation_curve(const Matrix& delta_w);

}  // namespace mor
