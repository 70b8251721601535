#include "trackpool/multi_identity.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace trackpool {

IdentityMask build_mask(const Matrix& x, double threshold) {
    if (x.rows == 0) throw std::invalid_argument("build_mask: empty input");
    const std::size_t n = x.rows;
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        norms[i] = l2_norm(x.row(i));
        if (norms[i] == 0.0)
            throw std::invalid_argument("build_mask: zero-norm embedding at frame " +
                                        std::to_string(i));
    }
    IdentityMask mask(n);
    for (std::size_t i = 0; i < n; ++i) {
        mask.at(i, i) = 1;
        for (std::size_t j = i + 1; j < n; ++j) {
            double d = 0.0;
            for (std::size_t c = 0; c < x.cols; ++c) d += x(i, c) * x(j, c);
            const double dist = 1.0 - d / (norms[i] * norms[j]);
            const std::uint8_t related = dist <= threshold ? 1 : 0;
            mask.at(i, j) = related;
            mask.at(j, i) = related;
        }
    }
    return mask;
}

IdentityMask greedy_postprocess(const IdentityMask& mask, const Vector& q_scores) {
    const std::size_t n = mask.n;
    if (q_scores.size() != n)
        throw std::invalid_argument("greedy_postprocess: mask is " + std::to_string(n) +
                                    "x" + std::to_string(n) + " but got " +
                                    std::to_string(q_scores.size()) + " scores");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return q_scores[a] > q_scores[b];
    });

    IdentityMask working = mask;
    IdentityMask out(n);
    for (const std::size_t idx : order) {
        // Claim whatever is still related to idx in the working mask, then
        // remove the claimed frames from circulation.
        for (std::size_t j = 0; j < n; ++j) out.at(idx, j) = working.at(idx, j);
        for (std::size_t j = 0; j < n; ++j) {
            if (!out.at(idx, j)) continue;
            for (std::size_t i = 0; i < n; ++i) {
                working.at(i, j) = 0;
                working.at(j, i) = 0;
            }
        }
    }
    return out;
}

TrackSet extract_tracks(const IdentityMask& processed) {
    const std::size_t n = processed.n;
    TrackSet set;
    set.assignment.assign(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> members;
        for (std::size_t j = 0; j < n; ++j)
            if (processed.at(i, j)) members.push_back(j);
        if (members.empty()) continue;
        const int track_id = static_cast<int>(set.tracks.size());
        for (const std::size_t m : members) {
            if (set.assignment[m] != -1)
                throw std::runtime_error(
                    "extract_tracks: frame " + std::to_string(m) +
                    " claimed by overlapping rows (mask not post-processed?)");
            set.assignment[m] = track_id;
        }
        set.tracks.push_back(std::move(members));
    }
    return set;
}

MultiAggregationResult aggregate_multi(const Matrix& x, const ModelWeights& w,
                                       double threshold) {
    const IdentityMask mask = build_mask(x, threshold);
    Vector norms(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) norms[i] = l2_norm(x.row(i));

    MultiAggregationResult out;
    out.tracks = extract_tracks(greedy_postprocess(mask, norms));
    out.results.reserve(out.tracks.k());
    for (const auto& members : out.tracks.tracks) {
        Matrix sub(members.size(), x.cols);
        for (std::size_t i = 0; i < members.size(); ++i)
            for (std::size_t j = 0; j < x.cols; ++j) sub(i, j) = x(members[i], j);
        out.results.push_back(aggregate_track(sub, w));
    }
    return out;
}

const char* to_string(SelectStrategy s) {
    return s == SelectStrategy::kHighestNorm ? "highest_norm" : "biggest";
}

SelectStrategy select_strategy_from_string(const std::string& s) {
    if (s == "highest_norm") return SelectStrategy::kHighestNorm;
    if (s == "biggest") return SelectStrategy::kBiggest;
    throw std::invalid_argument("unknown selection strategy '" + s +
                                "' (expected highest_norm|biggest)");
}

std::size_t select_component(const MultiAggregationResult& agg, const Matrix& x,
                             SelectStrategy strategy) {
    if (agg.results.empty())
        throw std::invalid_argument("select_component: no aggregation results");
    if (agg.results.size() != agg.tracks.k())
        throw std::invalid_argument("select_component: tracks/results size mismatch");

    std::size_t best = 0;
    if (strategy == SelectStrategy::kBiggest) {
        for (std::size_t t = 1; t < agg.tracks.k(); ++t)
            if (agg.tracks.tracks[t].size() > agg.tracks.tracks[best].size()) best = t;
        return best;
    }
    double best_norm = -1.0;
    for (std::size_t t = 0; t < agg.tracks.k(); ++t) {
        for (const std::size_t frame : agg.tracks.tracks[t]) {
            const double norm = l2_norm(x.row(frame));
            if (norm > best_norm) {
                best_norm = norm;
                best = t;
            }
        }
    }
    return best;
}

}  // namespace trackpool
