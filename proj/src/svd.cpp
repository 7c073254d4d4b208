#include "mor/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace mor {

namespace {

constexpr double kConvergenceTol = 1e-12;
constexpr int kMaxSweeps = 60;

double column_dot(const Matrix& g, std::size_t p, std::size_t q) {
    double acc = 0.0;
    for (std::size_t i = 0; i < g.rows(); ++i) acc += g(i, p) * g(i, q);
    return acc;
}

void rotate_columns(Matrix& m, std::size_t p, std::size_t q, double cs, double sn) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double vp = m(i, p);
        const double vq = m(i, q);
        m(i, p) = cs * vp - sn * vq;
        m(i, q) = sn * vp + cs * vq;
    }
}

// Fill column j of u with a unit vector orthogonal to all columns marked kept.
void complete_basis_column(Matrix& u, const std::vector<bool>& kept, std::size_t j) {
    const std::size_t m = u.rows();
    const std::size_t n = u.cols();
    double best_norm = -1.0;
    std::vector<double> best(m, 0.0);
    for (std::size_t cand = 0; cand < m; ++cand) {
        std::vector<double> r(m, 0.0);
        r[cand] = 1.0;
        for (std::size_t k = 0; k < n; ++k) {
            if (!kept[k]) continue;
            double proj = 0.0;
            for (std::size_t i = 0; i < m; ++i) proj += u(i, k) * r[i];
            for (std::size_t i = 0; i < m; ++i) r[i] -= proj * u(i, k);
        }
        double nrm = 0.0;
        for (double v : r) nrm += v * v;
        nrm = std::sqrt(nrm);
        if (nrm > best_norm) {
            best_norm = nrm;
            best = r;
        }
    }
    for (std::size_t i = 0; i < m; ++i) u(i, j) = best[i] / best_norm;
}

}  // namespace

SvdResult jacobi_svd(const Matrix& mat) {
    const std::size_t m = mat.rows();
    const std::size_t n = mat.cols();
    if (m < n)
        throw std::invalid_argument("jacobi_svd: need rows >= cols, got " + mat.shape_str());
    if (n == 0)
        throw std::invalid_argument("jacobi_svd: empty matrix");

    Matrix g = mat;
    Matrix v = Matrix::identity(n);

    // Hestenes sweeps: orthogonalize every column pair until the normalized
    // inner products fall below tolerance.
    double worst = 0.0;
    bool converged = false;
    for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
        worst = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double a = column_dot(g, p, p);
                const double b = column_dot(g, q, q);
                if (a == 0.0 || b == 0.0) continue;  // dead column, nothing to rotate
                const double c = column_dot(g, p, q);
                const double off = std::abs(c) / std::sqrt(a * b);
                worst = std::max(worst, off);
                if (off <= kConvergenceTol) continue;
                const double zeta = (b - a) / (2.0 * c);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                rotate_columns(g, p, q, cs, sn);
                rotate_columns(v, p, q, cs, sn);
            }
        }
        if (worst <= kConvergenceTol) converged = true;
    }
    if (!converged)
        throw std::runtime_error("jacobi_svd: no convergence after " +
                                 std::to_string(kMaxSweeps) +
                                 " sweeps, residual " + std::to_string(worst));

    Vector s(n);
    double s_max = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) acc += g(i, j) * g(i, j);
        s[j] = std::sqrt(acc);
        s_max = std::max(s_max, s[j]);
    }

    // Normalize columns into U; numerically dead columns get an orthonormal
    // filler so U stays column-orthonormal even for rank-deficient input.
    Matrix u(m, n);
    std::vector<bool> kept(n, false);
    const double null_tol = s_max * 1e-13;
    for (std::size_t j = 0; j < n; ++j) {
        if (s[j] > null_tol) {
            for (std::size_t i = 0; i < m; ++i) u(i, j) = g(i, j) / s[j];
            kept[j] = true;
        }
    }
    for (std::size_t j = 0; j < n; ++j) {
        if (!kept[j]) {
            complete_basis_column(u, kept, j);
            kept[j] = true;
        }
    }

    // Sort singular values descending, carrying U and V columns along.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&s](std::size_t x, std::size_t y) { return s[x] > s[y]; });
    SvdResult out;
    out.u = Matrix(m, n);
    out.s = Vector(n);
    out.v = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        out.s[j] = s[src];
        for (std::size_t i = 0; i < m; ++i) out.u(i, j) = u(i, src);
        for (std::size_t i = 0; i < n; ++i) out.v(i, j) = v(i, src);
    }
    return out;
}

Vector singular_values(const Matrix& m) {
    if (m.rows() >= m.cols()) return jacobi_svd(m).s;
    return jacobi_svd(m.transpose()).s;
}

std::size_t numerical_rank(const Matrix& m) {
    const Vector s = singular_values(m);
    if (s.size() == 0 || s[0] == 0.0) return 0;
    const double tol = 1e-10 * s[0];
    std::size_t r = 0;
    while (r < s.size() && s[r] > tol) ++r;
    return r;
}

}  // namespace mor
