#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace trackpool {

using Vector = std::vector<double>;

/// Dense row-major matrix of 64-bit floats. The whole pipeline runs in
/// double precision; float32 appears only at the serialization boundary.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major, data.size() == rows * cols

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rws);

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    Vector row_vec(std::size_t i) const { return Vector(row(i).begin(), row(i).end()); }

    bool empty() const { return rows == 0 || cols == 0; }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

bool all_finite(const Matrix& m);
bool all_finite(const Vector& v);

// Standard product a*b. Throws std::invalid_argument naming both shapes
// when a.cols != b.rows.
Matrix matmul(const Matrix& a, const Matrix& b);

// a * b^T and a^T * b without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

Matrix add(const Matrix& a, const Matrix& b);
void add_in_place(Matrix& a, const Matrix& b);
void scale_in_place(Matrix& m, double factor);

// Numerically stable softmax (max-subtraction). Empty input is an error.
Vector softmax(const Vector& v);
Matrix row_softmax(const Matrix& m);

// Zero-mean unit-variance normalization of v followed by gain/bias affine.
Vector layer_norm(const Vector& v, const Vector& gain, const Vector& bias,
                  double eps = 1e-6);

double dot(const Vector& a, const Vector& b);
double l2_norm(const Vector& a);
double l2_norm(std::span<const double> a);

// 1 - cos(a, b), in [0, 2]. Zero-norm input is an error.
double cosine_distance(const Vector& a, const Vector& b);
double cosine_similarity(const Vector& a, const Vector& b);

}  // namespace trackpool
