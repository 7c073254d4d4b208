#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace mor {

// Dense row-major matrix of 64-bit floats. The only matrix type in the
// project; every operation that consumes it is single-threaded and uses a
// fixed accumulation order so results are reproducible bit-for-bit.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
    Matrix(std::size_t rows, std::size_t cols, double fill)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    Matrix transpose() const;
    double frobenius_norm() const;
    double max_abs() const;
    bool all_finite() const;
    std::string shape_str() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

class Vector {
public:
    Vector() = default;
    explicit Vector(std::size_t len) : data_(len, 0.0) {}
    Vector(std::size_t len, double fill) : data_(len, fill) {}
    Vector(std::initializer_list<double> vals) : data_(vals) {}

    std::size_t size() const { return data_.size(); }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    double norm() const;
    bool all_finite() const;

private:
    std::vector<double> data_;
};

// C = M * N with the k-inner loop ascending; throws std::invalid_argument on
// dimension mismatch, naming both shapes.
Matrix matmul(const Matrix& m, const Matrix& n);
Vector matvec(const Matrix& m, const Vector& v);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double s);
Vector add(const Vector& a, const Vector& b);
Vector sub(const Vector& a, const Vector& b);
Vector scale(const Vector& v, double s);
Vector hadamard(const Vector& a, const Vector& b);
double dot(const Vector& a, const Vector& b);

// Max-subtracted softmax; output sums to 1 within 1e-12 and never overflows.
Vector softmax_stable(const Vector& v);

double max_abs_diff(const Matrix& a, const Matrix& b);
double max_abs_diff(const Vector& a, const Vector& b);
double frobenius_diff(const Matrix& a, const Matrix& b);

}  // namespace mor
