#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "trackpool/aggregator.hpp"
#include "trackpool/data_io.hpp"
#include "trackpool/encoder.hpp"
#include "trackpool/metrics.hpp"
#include "trackpool/multi_identity.hpp"
#include "trackpool/training.hpp"

namespace py = pybind11;
using namespace trackpool;

namespace {

Matrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d float array");
    Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), m.data.begin());
    return m;
}

py::array_t<double> from_matrix(const Matrix& m) {
    py::array_t<double> out({m.rows, m.cols});
    std::copy(m.data.begin(), m.data.end(), out.mutable_data());
    return out;
}

Vector to_vector(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 1) throw std::invalid_argument("expected a 1-d float array");
    return Vector(a.data(), a.data() + a.size());
}

py::array_t<double> from_vector(const Vector& v) {
    py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

IdentityMask to_mask(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2 || a.shape(0) != a.shape(1))
        throw std::invalid_argument("expected a square uint8 mask");
    IdentityMask mask(static_cast<std::size_t>(a.shape(0)));
    std::copy(a.data(), a.data() + a.size(), mask.bits.begin());
    return mask;
}

py::array_t<std::uint8_t> from_mask(const IdentityMask& mask) {
    py::array_t<std::uint8_t> out({mask.n, mask.n});
    std::copy(mask.bits.begin(), mask.bits.end(), out.mutable_data());
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Self-attention aggregation of face-track embeddings";

    py::class_<EncoderConfig>(m, "EncoderConfig")
        .def(py::init<>())
        .def_readwrite("embed_dim", &EncoderConfig::embed_dim)
        .def_readwrite("num_heads", &EncoderConfig::num_heads)
        .def_readwrite("num_blocks", &EncoderConfig::num_blocks)
        .def_readwrite("ffn_hidden", &EncoderConfig::ffn_hidden)
        .def_readwrite("attention_dropout", &EncoderConfig::attention_dropout)
        .def_readwrite("relu_dropout", &EncoderConfig::relu_dropout)
        .def_readwrite("use_positional_encoding", &EncoderConfig::use_positional_encoding)
        .def_readwrite("layer_norm_eps", &EncoderConfig::layer_norm_eps);

    py::class_<ModelWeights>(m, "ModelWeights")
        .def_property_readonly("embed_dim",
                               [](const ModelWeights& w) { return w.cfg.embed_dim; })
        .def_property_readonly("score_mode", [](const ModelWeights& w) {
            return std::string(to_string(w.head.mode));
        })
        .def_property_readonly(
            "config", [](const ModelWeights& w) { return w.cfg; })
        .def("save", [](const ModelWeights& w, const std::filesystem::path& path) {
            save_checkpoint(w, path);
        })
        .def_static("load", &load_checkpoint)
        .def_static(
            "random",
            [](const EncoderConfig& cfg, const std::string& mode, std::uint64_t seed) {
                Rng rng(seed);
                return init_model(cfg, score_mode_from_string(mode), rng);
            },
            py::arg("config"), py::arg("score_mode") = "element", py::arg("seed") = 0);

    m.def("positional_encoding", [](std::size_t n, std::size_t d) {
        return from_matrix(positional_encoding(n, d));
    });
    m.def("softmax", [](const py::array_t<double>& v) {
        return from_vector(softmax(to_vector(v)));
    });
    m.def("layer_norm",
          [](const py::array_t<double>& v, const py::array_t<double>& gain,
             const py::array_t<double>& bias, double eps) {
              return from_vector(layer_norm(to_vector(v), to_vector(gain),
                                            to_vector(bias), eps));
          },
          py::arg("v"), py::arg("gain"), py::arg("bias"), py::arg("eps") = 1e-6);
    m.def("cosine_distance", [](const py::array_t<double>& a, const py::array_t<double>& b) {
        return cosine_distance(to_vector(a), to_vector(b));
    });
    m.def("l2_norm",
          [](const py::array_t<double>& a) { return l2_norm(to_vector(a)); });

    m.def(
        "encode",
        [](const py::array_t<double>& frames, const ModelWeights& w) {
            return from_matrix(encode(to_matrix(frames), w));
        },
        py::arg("frames"), py::arg("model"),
        "Multi-head self-attention reweighting of a track's embedding matrix");

    m.def(
        "aggregate",
        [](const py::array_t<double>& frames, const ModelWeights& w) {
            const AggregationResult res = aggregate_track(to_matrix(frames), w);
            return py::make_tuple(from_vector(res.r), from_matrix(res.q),
                                  from_matrix(res.s));
        },
        py::arg("frames"), py::arg("model"),
        "Quality-weighted pooling; returns (template, normalized scores, raw scores)");

    m.def("average_pool", [](const py::array_t<double>& frames) {
        return from_vector(average_pool(to_matrix(frames)));
    });

    m.def(
        "build_mask",
        [](const py::array_t<double>& frames, double threshold) {
            return from_mask(build_mask(to_matrix(frames), threshold));
        },
        py::arg("frames"), py::arg("threshold") = 0.7);
    m.def("greedy_postprocess",
          [](const py::array_t<std::uint8_t>& mask, const py::array_t<double>& norms) {
              return from_mask(greedy_postprocess(to_mask(mask), to_vector(norms)));
          });
    m.def("extract_tracks", [](const py::array_t<std::uint8_t>& mask) {
        return extract_tracks(to_mask(mask)).tracks;
    });
    m.def(
        "aggregate_multi",
        [](const py::array_t<double>& frames, const ModelWeights& w, double threshold) {
            const MultiAggregationResult res =
                aggregate_multi(to_matrix(frames), w, threshold);
            py::list out;
            for (std::size_t t = 0; t < res.tracks.k(); ++t) {
                py::dict entry;
                entry["frames"] = res.tracks.tracks[t];
                entry["template"] = from_vector(res.results[t].r);
                out.append(std::move(entry));
            }
            return out;
        },
        py::arg("frames"), py::arg("model"), py::arg("threshold") = 0.7,
        "Decomposes a multi-identity sequence; one entry per discovered track");
    m.def(
        "select_component",
        [](const py::array_t<double>& frames, const ModelWeights& w, double threshold,
           const std::string& strategy) {
            const Matrix x = to_matrix(frames);
            const MultiAggregationResult res = aggregate_multi(x, w, threshold);
            return select_component(res, x, select_strategy_from_string(strategy));
        },
        py::arg("frames"), py::arg("model"), py::arg("threshold") = 0.7,
        py::arg("strategy") = "highest_norm");

    m.def(
        "roc",
        [](const py::array_t<double>& scores, const py::array_t<bool>& is_match) {
            const auto s = to_vector(scores);
            if (static_cast<py::ssize_t>(s.size()) != is_match.size())
                throw std::invalid_argument("scores and labels differ in length");
            std::vector<ScoredPair> pairs(s.size());
            for (std::size_t i = 0; i < s.size(); ++i)
                pairs[i] = {s[i], is_match.data()[i]};
            const RocCurve curve = roc(pairs);
            py::array_t<double> points({curve.points.size(), std::size_t(2)});
            for (std::size_t i = 0; i < curve.points.size(); ++i) {
                points.mutable_at(i, 0) = curve.points[i].far;
                points.mutable_at(i, 1) = curve.points[i].tar;
            }
            return py::make_tuple(points, curve.auc);
        },
        py::arg("scores"), py::arg("is_match"),
        "Threshold-sweep ROC; returns ((far, tar) points, auc)");
    m.def("tar_at_far",
          [](const py::array_t<double>& scores, const py::array_t<bool>& is_match,
             double far) {
              const auto s = to_vector(scores);
              std::vector<ScoredPair> pairs(s.size());
              for (std::size_t i = 0; i < s.size(); ++i)
                  pairs[i] = {s[i], is_match.data()[i]};
              return roc(pairs).tar_at_far(far);
          });
    m.def("identity_count_mpe", &identity_count_mpe);

    m.def(
        "gen_synthetic",
        [](std::size_t num_identities, std::size_t sessions_per_identity,
           std::size_t frames_per_session, std::size_t embed_dim, double noise_sigma,
           double quality_degradation, double erroneous_fraction, double degraded_bias,
           double min_centroid_distance, std::uint64_t seed) {
            SyntheticSpec spec;
            spec.num_identities = num_identities;
            spec.sessions_per_identity = sessions_per_identity;
            spec.frames_per_session = frames_per_session;
            spec.embed_dim = embed_dim;
            spec.noise_sigma = noise_sigma;
            spec.quality_degradation = quality_degradation;
            spec.erroneous_fraction = erroneous_fraction;
            spec.degraded_bias = degraded_bias;
            spec.min_centroid_distance = min_centroid_distance;
            spec.seed = seed;
            py::list out;
            for (const auto& rec : gen_synthetic(spec)) {
                py::dict entry;
                entry["track_id"] = rec.track_id;
                entry["identity"] = rec.identity ? py::cast(*rec.identity) : py::none();
                entry["frame_indices"] = rec.frame_indices;
                entry["embeddings"] = from_matrix(rec.embeddings);
                out.append(std::move(entry));
            }
            return out;
        },
        py::arg("num_identities") = 50, py::arg("sessions_per_identity") = 4,
        py::arg("frames_per_session") = 32, py::arg("embed_dim") = 64,
        py::arg("noise_sigma") = 0.05, py::arg("quality_degradation") = 0.0,
        py::arg("erroneous_fraction") = 0.0, py::arg("degraded_bias") = 0.0,
        py::arg("min_centroid_distance") = 0.0, py::arg("seed") = 0);

    m.def("read_tracks", [](const std::filesystem::path& path) {
        py::list out;
        for (const auto& rec : read_tracks(path)) {
            py::dict entry;
            entry["track_id"] = rec.track_id;
            entry["identity"] = rec.identity ? py::cast(*rec.identity) : py::none();
            entry["frame_indices"] = rec.frame_indices;
            entry["embeddings"] = from_matrix(rec.embeddings);
            out.append(std::move(entry));
        }
        return out;
    });
    m.def("write_tracks", [](const std::filesystem::path& path, const py::list& tracks) {
        std::vector<TrackRecord> records;
        for (const auto& item : tracks) {
            const py::dict entry = item.cast<py::dict>();
            TrackRecord rec;
            rec.track_id = entry["track_id"].cast<std::string>();
            if (!entry["identity"].is_none())
                rec.identity = entry["identity"].cast<std::string>();
            rec.frame_indices = entry["frame_indices"].cast<std::vector<std::int64_t>>();
            rec.embeddings = to_matrix(
                entry["embeddings"].cast<py::array_t<double, py::array::c_style |
                                                                 py::array::forcecast>>());
            records.push_back(std::move(rec));
        }
        write_tracks(path, records);
    });
}
