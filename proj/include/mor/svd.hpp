#pragma once

#include "mor/matrix.hpp"

namespace mor {

struct SvdResult {
    Matrix u;  // m x n, orthonormal columns
    Vector s;  // n singular values, descending, nonnegative
    Matrix v;  // n x n orthogonal
};

// One-sided Jacobi SVD for tall-or-square matrices (rows >= cols), intended
// for up to 64 columns. Sweeps until every normalized off-diagonal inner
// product is below 1e-12 (at most 60 sweeps); throws std::runtime_error with
// the residual if that cap is hit, std::invalid_argument if rows < cols.
SvdResult jacobi_svd(const Matrix& m);

// Singular values of an arbitrary rectangular matrix (transposes internally
// when cols > rows).
Vector singular_values(const Matrix& m);

// Numerical rank at threshold 1e-10 * sigma_max.
std::size_t numerical_rank(const Matrix& m);

}  // namespace mor
