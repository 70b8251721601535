#include "trackpool/aggregator.hpp"

#include <stdexcept>

namespace trackpool {

Matrix score(const Matrix& rmh, const QualityHead& head) {
    if (rmh.cols != head.w.rows)
        throw std::invalid_argument("score: rmh is " + std::to_string(rmh.rows) + "x" +
                                    std::to_string(rmh.cols) + " but head expects dim " +
                                    std::to_string(head.w.rows));
    return matmul(rmh, head.w);
}

AggregationResult aggregate(const Matrix& f, const Matrix& rmh,
                            const QualityHead& head, std::size_t n_valid) {
    if (f.rows == 0) throw std::invalid_argument("aggregate: empty track");
    if (f.rows != rmh.rows || f.cols != rmh.cols)
        throw std::invalid_argument("aggregate: f and rmh shapes differ");
    const std::size_t n = std::min<std::size_t>(n_valid, f.rows);
    if (n == 0) throw std::invalid_argument("aggregate: no valid frames");
    const std::size_t d = f.cols;

    AggregationResult out;
    out.s = score(rmh, head);

    // Softmax over the frame axis, per score column, valid frames only.
    out.q = Matrix(f.rows, out.s.cols);
    for (std::size_t c = 0; c < out.s.cols; ++c) {
        Vector col(n);
        for (std::size_t i = 0; i < n; ++i) col[i] = out.s(i, c);
        Vector sm = softmax(col);
        for (std::size_t i = 0; i < n; ++i) out.q(i, c) = sm[i];
    }

    out.r.assign(d, 0.0);
    if (head.mode == ScoreMode::kElement) {
        for (std::size_t i = 0; i < n; ++i) {
            const double w = out.q(i, 0);
            for (std::size_t j = 0; j < d; ++j) out.r[j] += f(i, j) * w;
        }
    } else {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) out.r[j] += f(i, j) * out.q(i, j);
    }
    return out;
}

Vector average_pool(const Matrix& f, std::size_t n_valid) {
    if (f.rows == 0) throw std::invalid_argument("average_pool: empty track");
    const std::size_t n = std::min<std::size_t>(n_valid, f.rows);
    if (n == 0) throw std::invalid_argument("average_pool: no valid frames");
    // Accumulates f(i,j) * (1/n) in the same order aggregate() uses, so that
    // uniform quality weights reproduce this result bit-for-bit.
    const double w = 1.0 / static_cast<double>(n);
    Vector out(f.cols, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f.cols; ++j) out[j] += f(i, j) * w;
    return out;
}

AggregationResult aggregate_track(const Matrix& f, const ModelWeights& w,
                                  std::size_t n_valid) {
    const Matrix rmh = encode(f, w, EncodeMode::kInfer, nullptr, n_valid);
    return aggregate(f, rmh, w.head, n_valid);
}

}  // namespace trackpool
