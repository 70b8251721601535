#include "trackpool/data_io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace trackpool {

namespace {

constexpr const char* kTrackFormat = "trackpool-tracks";
constexpr int kTrackVersion = 1;
constexpr char kCheckpointMagic[8] = {'T', 'P', 'C', 'K', 'P', 'T', '\r', '\n'};
constexpr std::uint32_t kCheckpointVersion = 1;

// Shortest decimal that round-trips through float32 (9 significant digits).
void append_f32(std::string& out, double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(static_cast<float>(value)));
    out += buf;
}

[[noreturn]] void line_error(const std::filesystem::path& path, std::size_t line,
                             const std::string& what) {
    throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

std::vector<TrackRecord> read_tracks(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open track file: " + path.string());

    std::vector<TrackRecord> out;
    std::string line;
    std::size_t line_no = 0;
    std::size_t dim = 0;
    bool header_seen = false;

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            line_error(path, line_no, std::string("malformed JSON: ") + e.what());
        }
        if (!header_seen) {
            if (!j.is_object() || !j.contains("format"))
                line_error(path, line_no, "missing format header line");
            if (j["format"] != kTrackFormat)
                line_error(path, line_no, "unknown format tag '" +
                                              j["format"].dump() + "'");
            if (!j.contains("version") || !j["version"].is_number_integer() ||
                j["version"].get<int>() != kTrackVersion)
                line_error(path, line_no, "unsupported track file version");
            header_seen = true;
            continue;
        }
        try {
            TrackRecord rec;
            rec.track_id = j.at("track_id").get<std::string>();
            if (!j.at("identity").is_null())
                rec.identity = j.at("identity").get<std::string>();
            const auto& frames = j.at("frames");
            if (!frames.is_array() || frames.empty())
                line_error(path, line_no, "track '" + rec.track_id + "' has no frames");
            const std::size_t n = frames.size();
            std::size_t d = frames[0].at("e").size();
            if (d == 0) line_error(path, line_no, "empty embedding");
            if (dim == 0) dim = d;
            rec.embeddings = Matrix(n, dim);
            rec.frame_indices.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                const auto& fr = frames[i];
                rec.frame_indices[i] = fr.at("i").get<std::int64_t>();
                if (i > 0 && rec.frame_indices[i] <= rec.frame_indices[i - 1])
                    line_error(path, line_no,
                               "frame indices not strictly increasing in track '" +
                                   rec.track_id + "'");
                const auto& e = fr.at("e");
                if (e.size() != dim)
                    line_error(path, line_no,
                               "inconsistent embedding dim: got " +
                                   std::to_string(e.size()) + ", file uses " +
                                   std::to_string(dim));
                for (std::size_t c = 0; c < dim; ++c) {
                    const double v = e[c].get<double>();
                    if (!std::isfinite(v))
                        line_error(path, line_no, "non-finite embedding value");
                    rec.embeddings(i, c) = v;
                }
            }
            out.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            line_error(path, line_no, std::string("bad track record: ") + e.what());
        }
    }
    return out;
}

void write_tracks(const std::filesystem::path& path,
                  const std::vector<TrackRecord>& tracks) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write track file: " + path.string());
    out << "{\"format\":\"" << kTrackFormat << "\",\"version\":" << kTrackVersion
        << "}\n";
    std::string line;
    for (const auto& t : tracks) {
        if (t.embeddings.rows == 0)
            throw std::invalid_argument("write_tracks: track '" + t.track_id +
                                        "' has no frames");
        if (t.frame_indices.size() != t.embeddings.rows)
            throw std::invalid_argument("write_tracks: track '" + t.track_id +
                                        "' frame index count mismatch");
        line.clear();
        line += "{\"track_id\":";
        line += nlohmann::json(t.track_id).dump();
        line += ",\"identity\":";
        line += t.identity ? nlohmann::json(*t.identity).dump() : "null";
        line += ",\"frames\":[";
        for (std::size_t i = 0; i < t.embeddings.rows; ++i) {
            if (i) line += ',';
            line += "{\"i\":" + std::to_string(t.frame_indices[i]) + ",\"e\":[";
            for (std::size_t j = 0; j < t.embeddings.cols; ++j) {
                if (j) line += ',';
                append_f32(line, t.embeddings(i, j));
            }
            line += "]}";
        }
        line += "]}\n";
        out << line;
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

Dataset group_tracks(const std::vector<TrackRecord>& tracks) {
    Dataset ds;
    std::map<std::string, std::size_t> index;
    for (const auto& t : tracks) {
        if (!t.identity)
            throw std::invalid_argument("group_tracks: track '" + t.track_id +
                                        "' has no identity label");
        if (ds.dim == 0) ds.dim = t.embeddings.cols;
        if (t.embeddings.cols != ds.dim)
            throw std::invalid_argument("group_tracks: embedding dim mismatch in '" +
                                        t.track_id + "'");
        auto [it, inserted] = index.try_emplace(*t.identity, ds.identities.size());
        if (inserted) {
            ds.identities.push_back(*t.identity);
            ds.sessions.emplace_back();
        }
        ds.sessions[it->second].push_back(t.embeddings);
    }
    return ds;
}

namespace {

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::filesystem::path& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
    return v;
}

}  // namespace

void save_checkpoint(const ModelWeights& w, const std::filesystem::path& path) {
    w.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_pod(out, kCheckpointVersion);
    write_pod(out, static_cast<std::uint32_t>(w.cfg.embed_dim));
    write_pod(out, static_cast<std::uint32_t>(w.cfg.num_heads));
    write_pod(out, static_cast<std::uint32_t>(w.cfg.num_blocks));
    write_pod(out, static_cast<std::uint32_t>(w.cfg.ffn_dim()));
    write_pod(out, w.cfg.attention_dropout);
    write_pod(out, w.cfg.relu_dropout);
    write_pod(out, w.cfg.layer_norm_eps);
    write_pod(out, static_cast<std::uint8_t>(w.cfg.use_positional_encoding ? 1 : 0));
    write_pod(out, static_cast<std::uint8_t>(w.head.mode == ScoreMode::kElement ? 0 : 1));
    write_pod(out, static_cast<std::uint64_t>(num_params(w)));
    auto& mutable_w = const_cast<ModelWeights&>(w);
    for (const auto& ref : param_refs(mutable_w))
        out.write(reinterpret_cast<const char*>(ref.data->data()),
                  static_cast<std::streamsize>(ref.data->size() * sizeof(double)));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

ModelWeights load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());

    char magic[sizeof(kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw std::runtime_error("not a trackpool checkpoint: " + path.string());
    const auto version = read_pod<std::uint32_t>(in, path);
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " +
                                 std::to_string(version) + " in " + path.string());

    EncoderConfig cfg;
    cfg.embed_dim = read_pod<std::uint32_t>(in, path);
    cfg.num_heads = read_pod<std::uint32_t>(in, path);
    cfg.num_blocks = read_pod<std::uint32_t>(in, path);
    cfg.ffn_hidden = read_pod<std::uint32_t>(in, path);
    cfg.attention_dropout = read_pod<double>(in, path);
    cfg.relu_dropout = read_pod<double>(in, path);
    cfg.layer_norm_eps = read_pod<double>(in, path);
    cfg.use_positional_encoding = read_pod<std::uint8_t>(in, path) != 0;
    const auto mode_tag = read_pod<std::uint8_t>(in, path);
    if (mode_tag > 1)
        throw std::runtime_error("bad score mode tag in checkpoint: " + path.string());
    cfg.validate();

    Rng dummy(0);
    ModelWeights w = init_model(
        cfg, mode_tag == 0 ? ScoreMode::kElement : ScoreMode::kComponent, dummy);
    const auto declared = read_pod<std::uint64_t>(in, path);
    if (declared != num_params(w))
        throw std::runtime_error("checkpoint parameter count " +
                                 std::to_string(declared) + " does not match config (" +
                                 std::to_string(num_params(w)) + "): " + path.string());
    for (const auto& ref : param_refs(w)) {
        in.read(reinterpret_cast<char*>(ref.data->data()),
                static_cast<std::streamsize>(ref.data->size() * sizeof(double)));
        if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
    }
    char extra;
    if (in.read(&extra, 1))
        throw std::runtime_error("trailing bytes after checkpoint payload: " +
                                 path.string());
    for (const auto& ref : param_refs(w))
        if (!all_finite(*ref.data))
            throw std::runtime_error("non-finite parameter in checkpoint: " +
                                     path.string());
    return w;
}

void SyntheticSpec::validate() const {
    if (num_identities == 0 || sessions_per_identity == 0 || frames_per_session == 0)
        throw std::invalid_argument("SyntheticSpec: counts must be positive");
    if (embed_dim == 0) throw std::invalid_argument("SyntheticSpec: embed_dim must be > 0");
    if (noise_sigma < 0.0) throw std::invalid_argument("SyntheticSpec: sigma must be >= 0");
    if (quality_degradation < 0.0 || quality_degradation > 1.0)
        throw std::invalid_argument("SyntheticSpec: quality_degradation must be in [0,1]");
    if (erroneous_fraction < 0.0 || erroneous_fraction > 1.0)
        throw std::invalid_argument("SyntheticSpec: erroneous_fraction must be in [0,1]");
    if (degraded_bias < 0.0)
        throw std::invalid_argument("SyntheticSpec: degraded_bias must be >= 0");
    if (erroneous_fraction > 0.0 && num_identities < 2)
        throw std::invalid_argument(
            "SyntheticSpec: erroneous frames need at least 2 identities");
    if (min_centroid_distance < 0.0 || min_centroid_distance > 2.0)
        throw std::invalid_argument("SyntheticSpec: min_centroid_distance must be in [0,2]");
}

namespace {

Vector normalized(Vector v) {
    const double n = l2_norm(v);
    if (n == 0.0) throw std::runtime_error("cannot normalize zero vector");
    for (double& x : v) x /= n;
    return v;
}

}  // namespace

std::vector<TrackRecord> gen_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);

    Vector junk;
    if (spec.degraded_bias > 0.0) junk = normalized(rng.normal_vec(spec.embed_dim));

    std::vector<Vector> centroids;
    centroids.reserve(spec.num_identities);
    for (std::size_t id = 0; id < spec.num_identities; ++id) {
        constexpr int kMaxAttempts = 10000;
        int attempt = 0;
        for (;; ++attempt) {
            if (attempt >= kMaxAttempts)
                throw std::runtime_error(
                    "gen_synthetic: cannot place centroid " + std::to_string(id) +
                    " with min_centroid_distance=" +
                    std::to_string(spec.min_centroid_distance));
            Vector c = normalized(rng.normal_vec(spec.embed_dim));
            bool ok = true;
            for (const auto& other : centroids)
                if (cosine_distance(c, other) < spec.min_centroid_distance) {
                    ok = false;
                    break;
                }
            if (ok) {
                centroids.push_back(std::move(c));
                break;
            }
        }
    }

    std::vector<TrackRecord> out;
    out.reserve(spec.num_identities * spec.sessions_per_identity);
    for (std::size_t id = 0; id < spec.num_identities; ++id) {
        const std::string name = "id" + std::to_string(id);
        for (std::size_t s = 0; s < spec.sessions_per_identity; ++s) {
            TrackRecord rec;
            rec.track_id = name + "_s" + std::to_string(s);
            rec.identity = name;
            rec.embeddings = Matrix(spec.frames_per_session, spec.embed_dim);
            rec.frame_indices.resize(spec.frames_per_session);
            for (std::size_t f = 0; f < spec.frames_per_session; ++f) {
                rec.frame_indices[f] = static_cast<std::int64_t>(f);
                // A misassigned detection: another identity's face at full
                // quality, like the erroneous elements found in real tracks.
                std::size_t source = id;
                if (spec.erroneous_fraction > 0.0 &&
                    rng.uniform() < spec.erroneous_fraction) {
                    source = rng.uniform_index(spec.num_identities - 1);
                    if (source >= id) ++source;
                }
                const bool degraded =
                    source == id && rng.uniform() < spec.quality_degradation;
                const double sigma = degraded ? 4.0 * spec.noise_sigma : spec.noise_sigma;
                Vector e = centroids[source];
                for (std::size_t c = 0; c < spec.embed_dim; ++c)
                    e[c] += sigma * rng.normal();
                e = normalized(std::move(e));
                if (degraded) {
                    if (spec.degraded_bias > 0.0) {
                        for (std::size_t c = 0; c < spec.embed_dim; ++c)
                            e[c] += spec.degraded_bias * junk[c];
                        e = normalized(std::move(e));
                    }
                    for (double& v : e) v *= 0.3;
                }
                for (std::size_t c = 0; c < spec.embed_dim; ++c)
                    rec.embeddings(f, c) = e[c];
            }
            out.push_back(std::move(rec));
        }
    }
    return out;
}

void MultiVideoSpec::validate() const {
    if (min_identities < 2)
        throw std::invalid_argument("MultiVideoSpec: need at least 2 identities");
    if (max_identities < min_identities)
        throw std::invalid_argument("MultiVideoSpec: empty identity range");
    if (frames_sampled < max_identities)
        throw std::invalid_argument(
            "MultiVideoSpec: frames_sampled must be >= max_identities");
}

IdentityMask MultiVideo::ground_truth_mask() const {
    IdentityMask mask(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
        for (std::size_t j = 0; j < labels.size(); ++j)
            mask.at(i, j) = labels[i] == labels[j] ? 1 : 0;
    return mask;
}

MultiVideo gen_multi_video(const Dataset& dataset, const MultiVideoSpec& spec,
                           Rng& rng) {
    spec.validate();
    if (dataset.num_classes() < spec.max_identities)
        throw std::invalid_argument("gen_multi_video: dataset has " +
                                    std::to_string(dataset.num_classes()) +
                                    " identities, spec needs at least " +
                                    std::to_string(spec.max_identities));

    const std::size_t k = static_cast<std::size_t>(rng.uniform_int(
        static_cast<std::int64_t>(spec.min_identities),
        static_cast<std::int64_t>(spec.max_identities)));
    const auto chosen = rng.sample_without_replacement(dataset.num_classes(), k);

    // Concatenate one randomly chosen session per identity.
    std::vector<const Matrix*> parts;
    std::vector<std::size_t> part_labels;
    std::size_t total = 0;
    for (const std::size_t cls : chosen) {
        const auto& sess = dataset.sessions[cls];
        if (sess.empty())
            throw std::invalid_argument("gen_multi_video: identity '" +
                                        dataset.identities[cls] + "' has no sessions");
        const Matrix& m = sess[rng.uniform_index(sess.size())];
        parts.push_back(&m);
        part_labels.push_back(cls);
        total += m.rows;
    }

    std::vector<std::size_t> keep;
    if (total <= spec.frames_sampled) {
        keep.resize(total);
        for (std::size_t i = 0; i < total; ++i) keep[i] = i;
    } else {
        keep = rng.sample_without_replacement(total, spec.frames_sampled);
    }

    MultiVideo video;
    video.frames = Matrix(keep.size(), dataset.dim);
    video.labels.resize(keep.size());
    std::size_t out_row = 0;
    std::size_t part = 0, offset = 0;
    for (const std::size_t global : keep) {
        while (global >= offset + parts[part]->rows) {
            offset += parts[part]->rows;
            ++part;
        }
        const Matrix& src = *parts[part];
        const std::size_t local = global - offset;
        for (std::size_t c = 0; c < dataset.dim; ++c)
            video.frames(out_row, c) = src(local, c);
        video.labels[out_row] = part_labels[part];
        ++out_row;
    }

    std::vector<bool> seen(dataset.num_classes(), false);
    for (const std::size_t l : video.labels)
        if (!seen[l]) {
            seen[l] = true;
            ++video.true_k;
        }
    return video;
}

}  // namespace trackpool
