#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "trackpool/data_io.hpp"
#include "trackpool/multi_identity.hpp"
#include "trackpool/rng.hpp"

using namespace trackpool;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (double& v : m.data) v = rng.normal();
    return m;
}

// Literal transcription of the published post-processing routine, kept
// independent of the library implementation: argsort the scores, walk the
// indices from the back, copy the working row, zero claimed rows/columns.
IdentityMask reference_postprocess(const IdentityMask& p_mask, const Vector& q_scores) {
    const std::size_t n = p_mask.n;
    IdentityMask p_mask_c = p_mask;
    IdentityMask f_mask(n);
    std::vector<std::size_t> q_sorted(n);
    std::iota(q_sorted.begin(), q_sorted.end(), 0);
    std::stable_sort(q_sorted.begin(), q_sorted.end(),
                     [&](std::size_t a, std::size_t b) { return q_scores[a] < q_scores[b]; });
    for (auto it = q_sorted.rbegin(); it != q_sorted.rend(); ++it) {
        const std::size_t q_ind = *it;
        for (std::size_t j = 0; j < n; ++j) f_mask.at(q_ind, j) = p_mask_c.at(q_ind, j);
        std::vector<std::size_t> non_zero_els;
        for (std::size_t j = 0; j < n; ++j)
            if (f_mask.at(q_ind, j) != 0) non_zero_els.push_back(j);
        for (const std::size_t el : non_zero_els) {
            for (std::size_t i = 0; i < n; ++i) p_mask_c.at(i, el) = 0;
            for (std::size_t i = 0; i < n; ++i) p_mask_c.at(el, i) = 0;
        }
    }
    return f_mask;
}

IdentityMask random_reflexive_symmetric_mask(std::size_t n, Rng& rng) {
    IdentityMask mask(n);
    for (std::size_t i = 0; i < n; ++i) {
        mask.at(i, i) = 1;
        for (std::size_t j = i + 1; j < n; ++j) {
            const std::uint8_t bit = rng.uniform() < 0.35 ? 1 : 0;
            mask.at(i, j) = bit;
            mask.at(j, i) = bit;
        }
    }
    return mask;
}

Vector distinct_random_norms(std::size_t n, Rng& rng) {
    Vector norms(n);
    for (std::size_t i = 0; i < n; ++i)
        norms[i] = rng.uniform() + static_cast<double>(i) * 1e-9;
    return norms;
}

ModelWeights tiny_model(std::size_t d, std::uint64_t seed) {
    EncoderConfig cfg;
    cfg.embed_dim = d;
    cfg.num_heads = 2;
    cfg.num_blocks = 1;
    cfg.ffn_hidden = 2 * d;
    cfg.attention_dropout = 0.0;
    cfg.relu_dropout = 0.0;
    cfg.use_positional_encoding = false;
    Rng rng(seed);
    return init_model(cfg, ScoreMode::kElement, rng);
}

}  // namespace

TEST_SUITE("multi_identity") {

TEST_CASE("build_mask basics") {
    const Matrix single = Matrix::from_rows({{0.5, 0.5}});
    const IdentityMask m1 = build_mask(single, 0.7);
    CHECK(m1.n == 1);
    CHECK(m1.at(0, 0) == 1);

    const Matrix three =
        Matrix::from_rows({{1, 0}, {1, 0}, {0, 1}});
    const IdentityMask m3 = build_mask(three, 0.5);
    const std::uint8_t expected[3][3] = {{1, 1, 0}, {1, 1, 0}, {0, 0, 1}};
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(m3.at(i, j) == expected[i][j]);
}

TEST_CASE("threshold 2 relates everything") {
    Rng rng(51);
    Matrix x = random_matrix(6, 5, rng);
    const IdentityMask mask = build_mask(x, 2.0);
    for (std::uint8_t b : mask.bits) CHECK(b == 1);
}

TEST_CASE("zero-norm frame is rejected with its index") {
    Matrix x = Matrix::from_rows({{1, 0}, {0, 0}, {0, 1}});
    CHECK_THROWS_WITH_AS(build_mask(x, 0.5), doctest::Contains("frame 1"),
                         std::invalid_argument);
}

TEST_CASE("mask is symmetric with a reflexive diagonal") {
    Rng rng(52);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + rng.uniform_index(10);
        const Matrix x = random_matrix(n, 6, rng);
        const IdentityMask mask = build_mask(x, 0.9);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(mask.at(i, i) == 1);
            for (std::size_t j = 0; j < n; ++j) {
                CHECK(mask.at(i, j) == mask.at(j, i));
                // Every pair decision matches a direct recomputation.
                if (i != j) {
                    const double dist =
                        cosine_distance(x.row_vec(i), x.row_vec(j));
                    CHECK(mask.at(i, j) == (dist <= 0.9 ? 1 : 0));
                }
            }
        }
    }
}

TEST_CASE("greedy post-processing matches the hand-traced example") {
    IdentityMask mask(3);
    const std::uint8_t in[3][3] = {{1, 1, 0}, {1, 1, 0}, {0, 0, 1}};
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) mask.at(i, j) = in[i][j];

    const IdentityMask out = greedy_postprocess(mask, {1.0, 2.0, 0.5});
    const std::uint8_t expected[3][3] = {{0, 0, 0}, {1, 1, 0}, {0, 0, 1}};
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(out.at(i, j) == expected[i][j]);
}

TEST_CASE("identity mask is unchanged by post-processing") {
    Rng rng(53);
    IdentityMask mask(5);
    for (std::size_t i = 0; i < 5; ++i) mask.at(i, i) = 1;
    const IdentityMask out = greedy_postprocess(mask, distinct_random_norms(5, rng));
    CHECK(out.bits == mask.bits);
}

TEST_CASE("all-ones mask collapses into one claim by the highest norm") {
    IdentityMask mask(4);
    for (auto& b : mask.bits) b = 1;
    const IdentityMask out = greedy_postprocess(mask, {0.1, 3.0, 0.2, 0.3});
    for (std::size_t j = 0; j < 4; ++j) CHECK(out.at(1, j) == 1);
    for (std::size_t i = 0; i < 4; ++i)
        if (i != 1)
            for (std::size_t j = 0; j < 4; ++j) CHECK(out.at(i, j) == 0);
}

TEST_CASE("norm ties are visited in ascending frame order") {
    IdentityMask mask(2);
    for (auto& b : mask.bits) b = 1;
    const IdentityMask out = greedy_postprocess(mask, {1.0, 1.0});
    CHECK(out.at(0, 0) == 1);
    CHECK(out.at(0, 1) == 1);
    CHECK(out.at(1, 0) == 0);
    CHECK(out.at(1, 1) == 0);
}

TEST_CASE("greedy output matches the reference transcription exactly") {
    Rng rng(54);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(16);
        const IdentityMask mask = random_reflexive_symmetric_mask(n, rng);
        const Vector norms = distinct_random_norms(n, rng);
        const IdentityMask got = greedy_postprocess(mask, norms);
        const IdentityMask want = reference_postprocess(mask, norms);
        CHECK(got.bits == want.bits);
    }
}

TEST_CASE("greedy output rows are pairwise disjoint") {
    Rng rng(55);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.uniform_index(12);
        const IdentityMask out = greedy_postprocess(
            random_reflexive_symmetric_mask(n, rng), distinct_random_norms(n, rng));
        std::vector<int> claimed(n, 0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (out.at(i, j)) ++claimed[j];
        for (const int c : claimed) CHECK(c <= 1);
    }
}

TEST_CASE("length mismatch is rejected") {
    CHECK_THROWS_AS(greedy_postprocess(IdentityMask(3), {1.0, 2.0}),
                    std::invalid_argument);
}

TEST_CASE("extract_tracks continues the hand trace") {
    IdentityMask processed(3);
    processed.at(1, 0) = processed.at(1, 1) = 1;
    processed.at(2, 2) = 1;
    const TrackSet set = extract_tracks(processed);
    REQUIRE(set.k() == 2);
    CHECK(set.tracks[0] == std::vector<std::size_t>{0, 1});
    CHECK(set.tracks[1] == std::vector<std::size_t>{2});
    CHECK(set.assignment == std::vector<int>{0, 0, 1});
}

TEST_CASE("extract_tracks on the identity mask gives singletons") {
    IdentityMask processed(4);
    for (std::size_t i = 0; i < 4; ++i) processed.at(i, i) = 1;
    const TrackSet set = extract_tracks(processed);
    REQUIRE(set.k() == 4);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(set.tracks[i] == std::vector<std::size_t>{i});
}

TEST_CASE("a single all-ones row is one track with every frame") {
    IdentityMask processed(3);
    for (std::size_t j = 0; j < 3; ++j) processed.at(1, j) = 1;
    const TrackSet set = extract_tracks(processed);
    REQUIRE(set.k() == 1);
    CHECK(set.tracks[0] == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("overlapping claims are an internal-consistency error") {
    IdentityMask bad(2);
    bad.at(0, 0) = bad.at(0, 1) = 1;
    bad.at(1, 1) = 1;
    CHECK_THROWS_AS(extract_tracks(bad), std::runtime_error);
}

TEST_CASE("every claimed frame is covered exactly once") {
    Rng rng(56);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(12);
        const IdentityMask out = greedy_postprocess(
            random_reflexive_symmetric_mask(n, rng), distinct_random_norms(n, rng));
        const TrackSet set = extract_tracks(out);
        std::vector<int> seen(n, 0);
        for (const auto& track : set.tracks) {
            CHECK(std::is_sorted(track.begin(), track.end()));
            for (const std::size_t m : track) ++seen[m];
        }
        for (std::size_t j = 0; j < n; ++j) {
            bool claimed = false;
            for (std::size_t i = 0; i < n; ++i) claimed |= out.at(i, j) != 0;
            CHECK(seen[j] == (claimed ? 1 : 0));
        }
    }
}

TEST_CASE("aggregate_multi: identical frames collapse to one track") {
    const ModelWeights w = tiny_model(4, 61);
    Matrix x(5, 4);
    for (std::size_t i = 0; i < 5; ++i) {
        x(i, 0) = 0.5;
        x(i, 1) = -0.25;
        x(i, 2) = 1.0;
        x(i, 3) = 0.125;
    }
    const auto res = aggregate_multi(x, w, 0.3);
    REQUIRE(res.tracks.k() == 1);
    for (std::size_t j = 0; j < 4; ++j)
        CHECK(res.results[0].r[j] == doctest::Approx(x(0, j)).epsilon(1e-9));
}

TEST_CASE("aggregate_multi: orthogonal clusters split and match the single-track path") {
    const ModelWeights w = tiny_model(4, 62);
    Rng rng(63);
    Matrix x(6, 4, 0.0);
    // Cluster A on axis 0, cluster B on axis 2, interleaved in time.
    for (const std::size_t i : {0u, 2u, 4u}) x(i, 0) = 1.0 + 0.01 * rng.normal();
    for (const std::size_t i : {1u, 3u, 5u}) x(i, 2) = 1.0 + 0.01 * rng.normal();

    const auto res = aggregate_multi(x, w, 0.5);
    REQUIRE(res.tracks.k() == 2);

    for (std::size_t t = 0; t < 2; ++t) {
        const auto& members = res.tracks.tracks[t];
        Matrix sub(members.size(), 4);
        for (std::size_t i = 0; i < members.size(); ++i)
            for (std::size_t j = 0; j < 4; ++j) sub(i, j) = x(members[i], j);
        const auto expected = aggregate_track(sub, w);
        CHECK(res.results[t].r == expected.r);
    }
}

TEST_CASE("aggregate_multi: single frame") {
    const ModelWeights w = tiny_model(4, 64);
    const Matrix x = Matrix::from_rows({{1.0, 2.0, 3.0, 4.0}});
    const auto res = aggregate_multi(x, w, 0.7);
    REQUIRE(res.tracks.k() == 1);
    for (std::size_t j = 0; j < 4; ++j) CHECK(res.results[0].r[j] == x(0, j));
}

TEST_CASE("a block-diagonal ground-truth mask recovers the exact identity count") {
    Rng rng(57);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t k = 1 + rng.uniform_index(6);
        std::vector<std::size_t> labels;
        for (std::size_t b = 0; b < k; ++b) {
            const std::size_t size = 1 + rng.uniform_index(5);
            for (std::size_t i = 0; i < size; ++i) labels.push_back(b);
        }
        rng.shuffle(labels);
        IdentityMask mask(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i)
            for (std::size_t j = 0; j < labels.size(); ++j)
                mask.at(i, j) = labels[i] == labels[j] ? 1 : 0;
        Vector norms = distinct_random_norms(labels.size(), rng);
        const TrackSet tracks = extract_tracks(greedy_postprocess(mask, norms));
        CHECK(tracks.k() == k);
        for (const auto& members : tracks.tracks)
            for (std::size_t m = 1; m < members.size(); ++m)
                CHECK(labels[members[m]] == labels[members[0]]);
    }
}

TEST_CASE("select_component strategies") {
    const ModelWeights w = tiny_model(4, 65);
    Matrix x(4, 4, 0.0);
    x(0, 0) = 1.0;
    x(1, 0) = 1.1;
    x(2, 0) = 0.9;
    x(3, 2) = 5.0;  // singleton but highest norm
    const auto res = aggregate_multi(x, w, 0.5);
    REQUIRE(res.tracks.k() == 2);
    CHECK(select_component(res, x, SelectStrategy::kBiggest) == 0);
    CHECK(select_component(res, x, SelectStrategy::kHighestNorm) == 1);

    CHECK_THROWS_AS(select_component(MultiAggregationResult{}, x,
                                     SelectStrategy::kBiggest),
                    std::invalid_argument);
}

TEST_CASE("select_component ties go to the lower track id") {
    MultiAggregationResult agg;
    agg.tracks.tracks = {{0, 1}, {2, 3}};
    agg.tracks.assignment = {0, 0, 1, 1};
    agg.results.resize(2);
    Matrix x(4, 2, 0.0);
    x(0, 0) = 1.0;
    x(1, 0) = 1.0;
    x(2, 1) = 1.0;
    x(3, 1) = 1.0;
    CHECK(select_component(agg, x, SelectStrategy::kBiggest) == 0);
    CHECK(select_component(agg, x, SelectStrategy::kHighestNorm) == 0);
}

}  // TEST_SUITE
