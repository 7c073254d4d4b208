#include "mor/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mor {

namespace {

[[noreturn]] void shape_error(const std::string& op, const std::string& lhs,
                              const std::string& rhs) {
    throw std::invalid_argument(op + ": dimension mismatch " + lhs + " vs " + rhs);
}

}  // namespace

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows.size() == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& row : rows) {
        if (row.size() != cols_)
            throw std::invalid_argument("Matrix: ragged initializer list");
        data_.insert(data_.end(), row.begin(), row.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
}

double Matrix::frobenius_norm() const {
    double acc = 0.0;
    for (double v : data_) acc += v * v;
    return std::sqrt(acc);
}

double Matrix::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
}

std::string Matrix::shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

double Vector::norm() const {
    double acc = 0.0;
    for (double v : data_) acc += v * v;
    return std::sqrt(acc);
}

bool Vector::all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& m, const Matrix& n) {
    if (m.cols() != n.rows())
        shape_error("matmul", m.shape_str(), n.shape_str());
    Matrix c(m.rows(), n.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < n.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < m.cols(); ++k) acc += m(i, k) * n(k, j);
            c(i, j) = acc;
        }
    }
    return c;
}

Vector matvec(const Matrix& m, const Vector& v) {
    if (m.cols() != v.size())
        shape_error("matvec", m.shape_str(), std::to_string(v.size()));
    Vector out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < m.cols(); ++k) acc += m(i, k) * v[k];
        out[i] = acc;
    }
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        shape_error("add", a.shape_str(), b.shape_str());
    Matrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] + b.data()[i];
    return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        shape_error("sub", a.shape_str(), b.shape_str());
    Matrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] - b.data()[i];
    return c;
}

Matrix scale(const Matrix& m, double s) {
    Matrix c(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.size(); ++i) c.data()[i] = m.data()[i] * s;
    return c;
}

Vector add(const Vector& a, const Vector& b) {
    if (a.size() != b.size())
        shape_error("add", std::to_string(a.size()), std::to_string(b.size()));
    Vector c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] + b[i];
    return c;
}

Vector sub(const Vector& a, const Vector& b) {
    if (a.size() != b.size())
        shape_error("sub", std::to_string(a.size()), std::to_string(b.size()));
    Vector c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] - b[i];
    return c;
}

Vector scale(const Vector& v, double s) {
    Vector c(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) c[i] = v[i] * s;
    return c;
}

Vector hadamard(const Vector& a, const Vector& b) {
    if (a.size() != b.size())
        shape_error("hadamard", std::to_string(a.size()), std::to_string(b.size()));
    Vector c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] * b[i];
    return c;
}

double dot(const Vector& a, const Vector& b) {
    if (a.size() != b.size())
        shape_error("dot", std::to_string(a.size()), std::to_string(b.size()));
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

Vector softmax_stable(const Vector& v) {
    if (v.size() == 0)
        throw std::invalid_argument("softmax_stable: empty vector");
    double mx = v[0];
    for (std::size_t i = 1; i < v.size(); ++i) mx = std::max(mx, v[i]);
    Vector out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        sum += out[i];
    }
    for (std::size_t i = 0; i < v.size(); ++i) out[i] /= sum;
    return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        shape_error("max_abs_diff", a.shape_str(), b.shape_str());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

double max_abs_diff(const Vector& a, const Vector& b) {
    if (a.size() != b.size())
        shape_error("max_abs_diff", std::to_string(a.size()), std::to_string(b.size()));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double frobenius_diff(const Matrix& a, const Matrix& b) {
    return sub(a, b).frobenius_norm();
}

}  // namespace mor
