#include "trackpool/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace trackpool {

namespace {

std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rws) {
    Matrix m(rws.size(), rws.size() ? rws.begin()->size() : 0);
    std::size_t i = 0;
    for (const auto& r : rws) {
        if (r.size() != m.cols)
            throw std::invalid_argument("from_rows: ragged row " + std::to_string(i));
        std::copy(r.begin(), r.end(), m.data.begin() + i * m.cols);
        ++i;
    }
    return m;
}

bool all_finite(const Matrix& m) {
    return std::all_of(m.data.begin(), m.data.end(),
                       [](double v) { return std::isfinite(v); });
}

bool all_finite(const Vector& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a) +
                                    " * " + shape_str(b));
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* crow = c.data.data() + i * c.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols)
        throw std::invalid_argument("matmul_nt: incompatible shapes " + shape_str(a) +
                                    " * " + shape_str(b) + "^T");
    Matrix c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + i * a.cols;
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* brow = b.data.data() + j * b.cols;
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            c(i, j) = acc;
        }
    }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows)
        throw std::invalid_argument("matmul_tn: incompatible shapes " + shape_str(a) +
                                    "^T * " + shape_str(b));
    Matrix c(a.cols, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + i * a.cols;
        const double* brow = b.data.data() + i * b.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            double* crow = c.data.data() + k * c.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
    return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
    Matrix c = a;
    add_in_place(c, b);
    return c;
}

void add_in_place(Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("add: incompatible shapes " + shape_str(a) +
                                    " + " + shape_str(b));
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

void scale_in_place(Matrix& m, double factor) {
    for (double& v : m.data) v *= factor;
}

Vector softmax(const Vector& v) {
    if (v.empty()) throw std::invalid_argument("softmax: empty input");
    if (!all_finite(v)) throw std::invalid_argument("softmax: non-finite input");
    const double mx = *std::max_element(v.begin(), v.end());
    Vector out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

Matrix row_softmax(const Matrix& m) {
    if (m.empty()) throw std::invalid_argument("row_softmax: empty input");
    Matrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        Vector s = softmax(m.row_vec(i));
        std::copy(s.begin(), s.end(), out.data.begin() + i * m.cols);
    }
    return out;
}

Vector layer_norm(const Vector& v, const Vector& gain, const Vector& bias, double eps) {
    if (v.size() != gain.size() || v.size() != bias.size())
        throw std::invalid_argument("layer_norm: dim mismatch (v=" +
                                    std::to_string(v.size()) + ", gain=" +
                                    std::to_string(gain.size()) + ", bias=" +
                                    std::to_string(bias.size()) + ")");
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be > 0");
    const std::size_t n = v.size();
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    Vector out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = (v[i] - mean) * inv * gain[i] + bias[i];
    return out;
}

double dot(const Vector& a, const Vector& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("dot: dim mismatch " + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()));
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double l2_norm(std::span<const double> a) {
    double acc = 0.0;
    for (double x : a) acc += x * x;
    return std::sqrt(acc);
}

double l2_norm(const Vector& a) { return l2_norm(std::span<const double>(a)); }

double cosine_similarity(const Vector& a, const Vector& b) {
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0)
        throw std::invalid_argument("cosine: zero-norm vector");
    return dot(a, b) / (na * nb);
}

double cosine_distance(const Vector& a, const Vector& b) {
    return 1.0 - cosine_similarity(a, b);
}

}  // namespace trackpool
