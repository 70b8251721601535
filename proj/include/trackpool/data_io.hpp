#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "trackpool/linalg.hpp"
#include "trackpool/model.hpp"
#include "trackpool/multi_identity.hpp"
#include "trackpool/rng.hpp"

namespace trackpool {

/// One face track: ordered per-frame embeddings of a single putative
/// identity. frame_indices are strictly increasing.
struct TrackRecord {
    std::string track_id;
    std::optional<std::string> identity;
    std::vector<std::int64_t> frame_indices;
    Matrix embeddings;  // n x d

    std::size_t size() const { return embeddings.rows; }
};

// Line-delimited JSON track file. The first line is a format tag
// ({"format":"trackpool-tracks","version":1}); every following line is one
// track record {"track_id","identity","frames":[{"i","e"}...]}. Embeddings
// are stored at float32 precision and promoted to f64 in memory.
std::vector<TrackRecord> read_tracks(const std::filesystem::path& path);
void write_tracks(const std::filesystem::path& path,
                  const std::vector<TrackRecord>& tracks);

/// Identity-grouped view of a track file, the unit the trainer consumes.
struct Dataset {
    std::vector<std::string> identities;        // class id -> name
    std::vector<std::vector<Matrix>> sessions;  // [class][session] = n x d
    std::size_t dim = 0;

    std::size_t num_classes() const { return identities.size(); }
};

// Groups records by identity label. Records without identity are an error.
Dataset group_tracks(const std::vector<TrackRecord>& tracks);

// Binary checkpoint: magic + version header with the full EncoderConfig and
// score mode, then every parameter tensor as flat little-endian f64 in
// param_refs order. Round-trips bit-exactly.
void save_checkpoint(const ModelWeights& w, const std::filesystem::path& path);
ModelWeights load_checkpoint(const std::filesystem::path& path);

/// Synthetic single-identity data: per identity a unit-sphere centroid,
/// per frame normalize(centroid + sigma * gauss). A quality_degradation
/// fraction of frames gets 4*sigma noise and its norm shrunk to 0.3 so that
/// embedding norm correlates with quality. An erroneous_fraction of frames
/// is drawn from a different identity's distribution at full norm, the way
/// misassigned detections pollute real face tracks.
struct SyntheticSpec {
    std::size_t num_identities = 50;
    std::size_t sessions_per_identity = 4;
    std::size_t frames_per_session = 32;
    std::size_t embed_dim = 64;
    double noise_sigma = 0.05;
    double quality_degradation = 0.0;
    double erroneous_fraction = 0.0;
    // Pulls degraded frames toward one shared low-quality direction before
    // the norm shrink (0 = off). Low-quality crops of different people land
    // close together in real embedding spaces; this reproduces that.
    double degraded_bias = 0.0;
    // When > 0, centroids are rejection-sampled until all pairwise cosine
    // distances reach this floor (well-separated identities).
    double min_centroid_distance = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

std::vector<TrackRecord> gen_synthetic(const SyntheticSpec& spec);

struct MultiVideoSpec {
    std::size_t min_identities = 2;
    std::size_t max_identities = 64;
    std::size_t frames_sampled = 256;

    void validate() const;
};

/// A synthetic multi-identity video: concatenated sessions of k sampled
/// identities, subsampled to frames_sampled frames with order preserved.
struct MultiVideo {
    Matrix frames;                    // m x d
    std::vector<std::size_t> labels;  // dataset class id per frame
    std::size_t true_k = 0;           // distinct identities actually present

    IdentityMask ground_truth_mask() const;
};

MultiVideo gen_multi_video(const Dataset& dataset, const MultiVideoSpec& spec,
                           Rng& rng);

}  // namespace trackpool
