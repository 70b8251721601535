#pragma once

#include <cstdint>
#include <vector>

#include "trackpool/aggregator.hpp"
#include "trackpool/linalg.hpp"
#include "trackpool/model.hpp"

namespace trackpool {

/// n x n binary relation over the frames of a multi-identity sequence.
/// Symmetric with an all-ones diagonal when produced by build_mask; after
/// greedy post-processing rows are disjoint claims instead.
struct IdentityMask {
    std::size_t n = 0;
    std::vector<std::uint8_t> bits;  // row-major n * n

    IdentityMask() = default;
    explicit IdentityMask(std::size_t size) : n(size), bits(size * size, 0) {}

    std::uint8_t& at(std::size_t i, std::size_t j) { return bits[i * n + j]; }
    std::uint8_t at(std::size_t i, std::size_t j) const { return bits[i * n + j]; }
};

/// Disjoint frame-index sets, ascending inside each track.
struct TrackSet {
    std::vector<std::vector<std::size_t>> tracks;
    std::vector<int> assignment;  // frame -> track id, -1 when unassigned

    std::size_t k() const { return tracks.size(); }
};

// bits[i][j] = 1 iff cosine_distance(row i, row j) <= threshold. Diagonal is
// forced to 1. A zero-norm row is an error naming the frame index.
IdentityMask build_mask(const Matrix& x, double threshold);

// Greedy claim pass over frames in descending q_score order (ties broken by
// ascending frame index): each visited frame copies its current working-mask
// row to the output, then every frame it claimed is zeroed out of the
// working mask (rows and columns). Matches the published listing.
IdentityMask greedy_postprocess(const IdentityMask& mask, const Vector& q_scores);

// Each nonzero row of a post-processed mask becomes one track built from its
// nonzero column indices. Overlapping rows indicate a broken input.
TrackSet extract_tracks(const IdentityMask& processed);

struct MultiAggregationResult {
    TrackSet tracks;
    std::vector<AggregationResult> results;  // one per track, same order
};

// Full decomposition pipeline: mask -> greedy post-processing (q_scores are
// the per-frame embedding norms) -> track extraction -> per-track encode and
// aggregate, preserving original frame order inside each track.
MultiAggregationResult aggregate_multi(const Matrix& x, const ModelWeights& w,
                                       double threshold);

enum class SelectStrategy { kHighestNorm, kBiggest };

const char* to_string(SelectStrategy s);
SelectStrategy select_strategy_from_string(const std::string& s);

// Picks one template for the sequence: the track containing the frame with
// the maximum embedding norm, or the track with the most frames. Ties go to
// the lower track id.
std::size_t select_component(const MultiAggregationResult& agg, const Matrix& x,
                             SelectStrategy strategy);

}  // namespace trackpool
