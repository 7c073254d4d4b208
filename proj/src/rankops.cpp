#include "mor/rankops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "mor/svd.hpp"

namespace mor {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

BlockSplit block_split(const Matrix& b, const Matrix& a, std::size_t n) {
    require(b.cols() == a.rows(), "block_split: inner dims " + b.shape_str() +
                                      " vs " + a.shape_str());
    const std::size_t r = b.cols();
    require(n >= 1, "block_split: need at least one block");
    require(r % n == 0, "block_split: " + std::to_string(n) +
                            " blocks do not divide rank " + std::to_string(r));
    const std::size_t slab = r / n;

    BlockSplit split;
    split.n_blocks = n;
    for (std::size_t i = 0; i < n; ++i) {
        RankBlock block{Matrix(b.rows(), slab), Matrix(slab, a.cols())};
        for (std::size_t row = 0; row < b.rows(); ++row)
            for (std::size_t c = 0; c < slab; ++c)
                block.b(row, c) = b(row, i * slab + c);
        for (std::size_t row = 0; row < slab; ++row)
            for (std::size_t c = 0; c < a.cols(); ++c)
                block.a(row, c) = a(i * slab + row, c);
        split.blocks.push_back(std::move(block));
    }
    return split;
}

Matrix block_reconstruct(const BlockSplit& split) {
    require(!split.blocks.empty(), "block_reconstruct: empty split");
    Matrix sum(split.blocks.front().b.rows(), split.blocks.front().a.cols());
    for (const RankBlock& block : split.blocks) {
        const Matrix prod = matmul(block.b, block.a);
        for (std::size_t i = 0; i < sum.rows(); ++i)
            for (std::size_t j = 0; j < sum.cols(); ++j) sum(i, j) += prod(i, j);
    }
    return sum;
}

Matrix sparse_mix(const BlockSplit& split, const Vector& g, std::size_t k) {
    const std::size_t n = split.n_blocks;
    require(g.size() == n, "sparse_mix: " + std::to_string(g.size()) +
                               " weights for " + std::to_string(n) + " blocks");
    require(k >= 1 && k <= n, "sparse_mix: k " + std::to_string(k) +
                                  " outside [1, " + std::to_string(n) + "]");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        require(g[i] >= 0.0, "sparse_mix: negative weight at index " +
                                 std::to_string(i));
        total += g[i];
    }
    require(std::fabs(total - 1.0) <= 1e-9,
            "sparse_mix: weights sum to " + std::to_string(total));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&g](std::size_t i, std::size_t j) { return g[i] > g[j]; });

    double selected_mass = 0.0;
    for (std::size_t i = 0; i < k; ++i) selected_mass += g[order[i]];

    Matrix sum(split.blocks.front().b.rows(), split.blocks.front().a.cols());
    // Accumulate in block order so the result does not depend on the sort.
    std::vector<double> weight(n, 0.0);
    for (std::size_t i = 0; i < k; ++i)
        weight[order[i]] = (k == n) ? g[order[i]] : g[order[i]] / selected_mass;
    for (std::size_t i = 0; i < n; ++i) {
        if (weight[i] == 0.0) continue;
        const Matrix prod = matmul(split.blocks[i].b, split.blocks[i].a);
        for (std::size_t row = 0; row < sum.rows(); ++row)
            for (std::size_t col = 0; col < sum.cols(); ++col)
                sum(row, col) += weight[i] * prod(row, col);
    }
    return sum;
}

TruncationCurve truncation_curve(const Matrix& delta_w) {
    const Vector s = singular_values(delta_w);
    const std::size_t m = s.size();

    TruncationCurve curve;
    curve.ranks.resize(m + 1);
    curve.errors.resize(m + 1);
    curve.errors[m] = 0.0;
    for (std::size_t r = m; r-- > 0;) {
        curve.errors[r] = curve.errors[r + 1] + s[r] * s[r];
    }
    for (std::size_t r = 0; r <= m; ++r) curve.ranks[r] = r;
    return curve;
}

}  // namespace mor
