#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "trackpool/data_io.hpp"
#include "trackpool/rng.hpp"

using namespace trackpool;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("trackpool_test_" + std::to_string(std::rand()) +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    fs::path file(const std::string& name) const { return path / name; }
};

std::vector<TrackRecord> random_tracks(std::size_t count, std::size_t dim, Rng& rng) {
    std::vector<TrackRecord> out;
    for (std::size_t t = 0; t < count; ++t) {
        TrackRecord rec;
        rec.track_id = "t" + std::to_string(t);
        if (t % 3 != 2) rec.identity = "person" + std::to_string(t % 4);
        const std::size_t n = 1 + rng.uniform_index(5);
        rec.embeddings = Matrix(n, dim);
        for (double& v : rec.embeddings.data) v = rng.normal();
        std::int64_t idx = -2;
        for (std::size_t i = 0; i < n; ++i) {
            idx += 1 + static_cast<std::int64_t>(rng.uniform_index(4));
            rec.frame_indices.push_back(idx);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
    std::ofstream out(p);
    for (const auto& l : lines) out << l << "\n";
}

ModelWeights random_model(std::uint64_t seed) {
    EncoderConfig cfg;
    cfg.embed_dim = 8;
    cfg.num_heads = 2;
    cfg.num_blocks = 2;
    cfg.ffn_hidden = 16;
    Rng rng(seed);
    return init_model(cfg, ScoreMode::kComponent, rng);
}

}  // namespace

TEST_SUITE("data_io") {

TEST_CASE("track files round-trip at float32 precision") {
    TempDir dir;
    Rng rng(121);
    const auto tracks = random_tracks(7, 6, rng);
    const auto path = dir.file("tracks.jsonl");
    write_tracks(path, tracks);
    const auto loaded = read_tracks(path);

    REQUIRE(loaded.size() == tracks.size());
    for (std::size_t t = 0; t < tracks.size(); ++t) {
        CHECK(loaded[t].track_id == tracks[t].track_id);
        CHECK(loaded[t].identity == tracks[t].identity);
        CHECK(loaded[t].frame_indices == tracks[t].frame_indices);
        REQUIRE(loaded[t].embeddings.rows == tracks[t].embeddings.rows);
        for (std::size_t i = 0; i < tracks[t].embeddings.data.size(); ++i) {
            const float orig = static_cast<float>(tracks[t].embeddings.data[i]);
            const float got = static_cast<float>(loaded[t].embeddings.data[i]);
            CHECK(orig == got);
        }
    }
}

TEST_CASE("empty and header-only files load as empty lists") {
    TempDir dir;
    const auto empty = dir.file("empty.jsonl");
    std::ofstream(empty).close();
    CHECK(read_tracks(empty).empty());

    const auto header_only = dir.file("header.jsonl");
    write_tracks(header_only, {});
    CHECK(read_tracks(header_only).empty());
}

TEST_CASE("malformed lines name the line number") {
    TempDir dir;
    const auto path = dir.file("bad.jsonl");
    write_lines(path, {R"({"format":"trackpool-tracks","version":1})",
                       R"({"track_id":"a","identity":null,"frames":[{"i":0,"e":[1,2]}]})",
                       "{not json"});
    CHECK_THROWS_WITH_AS(read_tracks(path), doctest::Contains(":3"),
                         std::runtime_error);
}

TEST_CASE("missing header is rejected") {
    TempDir dir;
    const auto path = dir.file("nohdr.jsonl");
    write_lines(path,
                {R"({"track_id":"a","identity":null,"frames":[{"i":0,"e":[1,2]}]})"});
    CHECK_THROWS_WITH_AS(read_tracks(path), doctest::Contains("format header"),
                         std::runtime_error);
}

TEST_CASE("non-increasing frame indices are rejected") {
    TempDir dir;
    const auto path = dir.file("order.jsonl");
    write_lines(
        path,
        {R"({"format":"trackpool-tracks","version":1})",
         R"({"track_id":"a","identity":null,"frames":[{"i":2,"e":[1]},{"i":1,"e":[2]}]})"});
    CHECK_THROWS_WITH_AS(read_tracks(path), doctest::Contains("strictly increasing"),
                         std::runtime_error);
}

TEST_CASE("inconsistent embedding dims are rejected") {
    TempDir dir;
    const auto path = dir.file("dims.jsonl");
    write_lines(
        path,
        {R"({"format":"trackpool-tracks","version":1})",
         R"({"track_id":"a","identity":null,"frames":[{"i":0,"e":[1,2]}]})",
         R"({"track_id":"b","identity":null,"frames":[{"i":0,"e":[1,2,3]}]})"});
    CHECK_THROWS_WITH_AS(read_tracks(path), doctest::Contains("inconsistent"),
                         std::runtime_error);
}

TEST_CASE("unknown version is rejected") {
    TempDir dir;
    const auto path = dir.file("version.jsonl");
    write_lines(path, {R"({"format":"trackpool-tracks","version":99})"});
    CHECK_THROWS_WITH_AS(read_tracks(path), doctest::Contains("version"),
                         std::runtime_error);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    TempDir dir;
    ModelWeights w = random_model(122);
    const auto path = dir.file("model.ckpt");
    save_checkpoint(w, path);
    ModelWeights loaded = load_checkpoint(path);

    CHECK(loaded.cfg.embed_dim == w.cfg.embed_dim);
    CHECK(loaded.cfg.num_heads == w.cfg.num_heads);
    CHECK(loaded.cfg.num_blocks == w.cfg.num_blocks);
    CHECK(loaded.cfg.ffn_dim() == w.cfg.ffn_dim());
    CHECK(loaded.head.mode == w.head.mode);

    const auto a = param_refs(w);
    const auto b = param_refs(loaded);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i].data == *b[i].data);

    // Saving the loaded model reproduces the file byte-for-byte.
    const auto path2 = dir.file("model2.ckpt");
    save_checkpoint(loaded, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string bytes1((std::istreambuf_iterator<char>(f1)), {});
    const std::string bytes2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(bytes1 == bytes2);
}

TEST_CASE("corrupted checkpoints produce diagnosable errors") {
    TempDir dir;
    const ModelWeights w = random_model(123);
    const auto path = dir.file("model.ckpt");
    save_checkpoint(w, path);

    SUBCASE("truncated") {
        const auto truncated = dir.file("trunc.ckpt");
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        bytes.resize(bytes.size() / 2);
        std::ofstream(truncated, std::ios::binary) << bytes;
        CHECK_THROWS_WITH_AS(load_checkpoint(truncated), doctest::Contains("truncated"),
                             std::runtime_error);
    }
    SUBCASE("bad magic") {
        const auto garbled = dir.file("magic.ckpt");
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        bytes[0] = 'X';
        std::ofstream(garbled, std::ios::binary) << bytes;
        CHECK_THROWS_WITH_AS(load_checkpoint(garbled),
                             doctest::Contains("not a trackpool checkpoint"),
                             std::runtime_error);
    }
    SUBCASE("trailing bytes") {
        const auto padded = dir.file("padded.ckpt");
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        bytes += "junk";
        std::ofstream(padded, std::ios::binary) << bytes;
        CHECK_THROWS_WITH_AS(load_checkpoint(padded), doctest::Contains("trailing"),
                             std::runtime_error);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_checkpoint(dir.file("nope.ckpt")), std::runtime_error);
    }
}

TEST_CASE("gen_synthetic: zero noise pins every frame to the centroid") {
    SyntheticSpec spec;
    spec.num_identities = 3;
    spec.sessions_per_identity = 2;
    spec.frames_per_session = 5;
    spec.embed_dim = 8;
    spec.noise_sigma = 0.0;
    spec.seed = 7;
    const auto tracks = gen_synthetic(spec);
    REQUIRE(tracks.size() == 6);
    for (const auto& t : tracks) {
        for (std::size_t i = 1; i < t.embeddings.rows; ++i)
            for (std::size_t j = 0; j < t.embeddings.cols; ++j)
                CHECK(t.embeddings(i, j) == t.embeddings(0, j));
    }
    // Same identity, different session: still the same centroid.
    for (std::size_t j = 0; j < 8; ++j)
        CHECK(tracks[0].embeddings(0, j) == tracks[1].embeddings(0, j));
}

TEST_CASE("gen_synthetic: identities land far apart in high dim") {
    SyntheticSpec spec;
    spec.num_identities = 2;
    spec.sessions_per_identity = 1;
    spec.frames_per_session = 20;
    spec.embed_dim = 64;
    spec.noise_sigma = 0.02;
    spec.seed = 8;
    const auto tracks = gen_synthetic(spec);
    double min_cross = 2.0;
    for (std::size_t i = 0; i < tracks[0].embeddings.rows; ++i)
        for (std::size_t j = 0; j < tracks[1].embeddings.rows; ++j)
            min_cross = std::min(min_cross,
                                 cosine_distance(tracks[0].embeddings.row_vec(i),
                                                 tracks[1].embeddings.row_vec(j)));
    CHECK(min_cross > 0.5);
}

TEST_CASE("gen_synthetic: same seed, same dataset") {
    SyntheticSpec spec;
    spec.num_identities = 4;
    spec.sessions_per_identity = 2;
    spec.frames_per_session = 6;
    spec.embed_dim = 16;
    spec.noise_sigma = 0.1;
    spec.quality_degradation = 0.3;
    spec.seed = 9;
    const auto a = gen_synthetic(spec);
    const auto b = gen_synthetic(spec);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a[i].embeddings.data == b[i].embeddings.data);
}

TEST_CASE("gen_synthetic: degraded frames carry shrunken norms") {
    SyntheticSpec spec;
    spec.num_identities = 2;
    spec.sessions_per_identity = 2;
    spec.frames_per_session = 50;
    spec.embed_dim = 16;
    spec.noise_sigma = 0.05;
    spec.quality_degradation = 0.5;
    spec.seed = 10;
    std::size_t degraded = 0, clean = 0;
    for (const auto& t : gen_synthetic(spec))
        for (std::size_t i = 0; i < t.embeddings.rows; ++i) {
            const double norm = l2_norm(t.embeddings.row(i));
            if (std::abs(norm - 0.3) < 1e-9)
                ++degraded;
            else if (std::abs(norm - 1.0) < 1e-9)
                ++clean;
        }
    CHECK(degraded + clean == 200);
    CHECK(degraded > 50);
    CHECK(clean > 50);
}

TEST_CASE("gen_synthetic: erroneous frames come from another identity") {
    SyntheticSpec spec;
    spec.num_identities = 6;
    spec.sessions_per_identity = 2;
    spec.frames_per_session = 40;
    spec.embed_dim = 32;
    spec.noise_sigma = 0.02;
    spec.erroneous_fraction = 0.25;
    spec.min_centroid_distance = 0.5;
    spec.seed = 21;
    const auto tracks = gen_synthetic(spec);

    // Recover centroids from clean consensus: an erroneous frame sits far
    // from its own session's majority but close to some other identity.
    std::size_t erroneous = 0, total = 0;
    for (const auto& t : tracks) {
        const Vector mean = average_pool(t.embeddings);
        for (std::size_t i = 0; i < t.embeddings.rows; ++i) {
            ++total;
            if (cosine_distance(t.embeddings.row_vec(i), mean) > 0.6) ++erroneous;
        }
    }
    CHECK(erroneous > total / 8);
    CHECK(erroneous < total / 2);
}

TEST_CASE("gen_synthetic: degraded_bias pulls degraded frames together") {
    SyntheticSpec spec;
    spec.num_identities = 8;
    spec.sessions_per_identity = 1;
    spec.frames_per_session = 40;
    spec.embed_dim = 32;
    spec.noise_sigma = 0.05;
    spec.quality_degradation = 0.4;
    spec.degraded_bias = 4.0;
    spec.seed = 22;
    const auto tracks = gen_synthetic(spec);

    // Degraded frames of different identities become mutually similar while
    // staying at norm 0.3.
    std::vector<Vector> degraded;
    for (const auto& t : tracks)
        for (std::size_t i = 0; i < t.embeddings.rows; ++i)
            if (l2_norm(t.embeddings.row(i)) < 0.5) {
                CHECK(l2_norm(t.embeddings.row(i)) == doctest::Approx(0.3).epsilon(1e-9));
                degraded.push_back(t.embeddings.row_vec(i));
            }
    REQUIRE(degraded.size() > 50);
    double mean_sim = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < degraded.size(); a += 7)
        for (std::size_t b = a + 1; b < degraded.size(); b += 7) {
            mean_sim += cosine_similarity(degraded[a], degraded[b]);
            ++pairs;
        }
    CHECK(mean_sim / pairs > 0.5);
}

TEST_CASE("gen_synthetic honors the centroid separation floor") {
    SyntheticSpec spec;
    spec.num_identities = 20;
    spec.sessions_per_identity = 1;
    spec.frames_per_session = 1;
    spec.embed_dim = 16;
    spec.noise_sigma = 0.0;
    spec.min_centroid_distance = 0.5;
    spec.seed = 11;
    const auto tracks = gen_synthetic(spec);
    for (std::size_t a = 0; a < tracks.size(); ++a)
        for (std::size_t b = a + 1; b < tracks.size(); ++b)
            CHECK(cosine_distance(tracks[a].embeddings.row_vec(0),
                                  tracks[b].embeddings.row_vec(0)) >= 0.5);

    // Geometrically impossible packings fail loudly instead of spinning.
    spec.embed_dim = 2;
    spec.num_identities = 10;
    spec.min_centroid_distance = 1.9;
    CHECK_THROWS_WITH_AS(gen_synthetic(spec), doctest::Contains("centroid"),
                         std::runtime_error);
}

TEST_CASE("group_tracks requires identity labels") {
    Rng rng(124);
    auto tracks = random_tracks(3, 4, rng);
    tracks[2].identity.reset();
    CHECK_THROWS_AS(group_tracks(tracks), std::invalid_argument);

    tracks[2].identity = "person0";
    const Dataset ds = group_tracks(tracks);
    CHECK(ds.dim == 4);
    std::size_t total = 0;
    for (const auto& s : ds.sessions) total += s.size();
    CHECK(total == tracks.size());
}

TEST_CASE("gen_multi_video basics") {
    SyntheticSpec spec;
    spec.num_identities = 6;
    spec.sessions_per_identity = 2;
    spec.frames_per_session = 10;
    spec.embed_dim = 8;
    spec.noise_sigma = 0.02;
    spec.seed = 12;
    const Dataset ds = group_tracks(gen_synthetic(spec));

    MultiVideoSpec video;
    video.min_identities = 2;
    video.max_identities = 2;
    video.frames_sampled = 20;

    Rng rng(13);
    const MultiVideo v = gen_multi_video(ds, video, rng);
    CHECK(v.true_k == 2);
    CHECK(v.frames.rows == 20);  // two full sessions concatenated
    CHECK(v.labels.size() == 20);

    // Frames of one identity stay contiguous: sampling preserves order.
    std::set<std::size_t> seen;
    std::size_t runs = 0;
    std::size_t prev = SIZE_MAX;
    for (const std::size_t l : v.labels) {
        if (l != prev) {
            ++runs;
            CHECK(seen.count(l) == 0);
            seen.insert(l);
            prev = l;
        }
    }
    CHECK(runs == 2);

    const IdentityMask mask = v.ground_truth_mask();
    for (std::size_t i = 0; i < mask.n; ++i) {
        CHECK(mask.at(i, i) == 1);
        for (std::size_t j = 0; j < mask.n; ++j) {
            CHECK(mask.at(i, j) == mask.at(j, i));
            for (std::size_t k = 0; k < mask.n; ++k)
                if (mask.at(i, j) && mask.at(j, k)) CHECK(mask.at(i, k) == 1);
        }
    }
}

TEST_CASE("gen_multi_video subsamples preserving order") {
    SyntheticSpec spec;
    spec.num_identities = 8;
    spec.sessions_per_identity = 1;
    spec.frames_per_session = 30;
    spec.embed_dim = 4;
    spec.noise_sigma = 0.3;
    spec.seed = 14;
    const Dataset ds = group_tracks(gen_synthetic(spec));

    MultiVideoSpec video;
    video.min_identities = 3;
    video.max_identities = 8;
    video.frames_sampled = 17;

    Rng r1(15), r2(15), r3(16);
    const MultiVideo a = gen_multi_video(ds, video, r1);
    const MultiVideo b = gen_multi_video(ds, video, r2);
    CHECK(a.frames.data == b.frames.data);
    CHECK(a.labels == b.labels);
    const MultiVideo c = gen_multi_video(ds, video, r3);
    CHECK(a.frames.rows == 17);
    CHECK(c.frames.rows == 17);

    std::set<std::size_t> distinct(a.labels.begin(), a.labels.end());
    CHECK(distinct.size() == a.true_k);

    MultiVideoSpec too_big = video;
    too_big.max_identities = 20;
    CHECK_THROWS_AS(gen_multi_video(ds, too_big, r1), std::invalid_argument);
}

}  // TEST_SUITE
