#pragma once

#include "trackpool/encoder.hpp"
#include "trackpool/linalg.hpp"
#include "trackpool/model.hpp"

namespace trackpool {

/// Template vector plus the quality scores that produced it. q holds one
/// column in element-wise mode and one column per feature in component-wise
/// mode; each column sums to 1 over the frames.
struct AggregationResult {
    Vector r;   // aggregated template, dim d
    Matrix q;   // normalized quality scores, n x 1 or n x d
    Matrix s;   // raw scores before softmax, same shape as q
};

// Raw quality scores s = rmh * head.w (n x 1 element-wise, n x d
// component-wise).
Matrix score(const Matrix& rmh, const QualityHead& head);

// Softmax-normalizes the scores over the frame axis (per column in
// component-wise mode) and pools the ORIGINAL embeddings f with them.
// Rows at index >= n_valid are padding and excluded.
AggregationResult aggregate(const Matrix& f, const Matrix& rmh,
                            const QualityHead& head,
                            std::size_t n_valid = SIZE_MAX);

// Plain column mean of the non-padded rows (the AVE baseline).
Vector average_pool(const Matrix& f, std::size_t n_valid = SIZE_MAX);

// Full single-track pipeline: encode then aggregate.
AggregationResult aggregate_track(const Matrix& f, const ModelWeights& w,
                                  std::size_t n_valid = SIZE_MAX);

}  // namespace trackpool
