#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "trackpool/aggregator.hpp"
#include "trackpool/data_io.hpp"
#include "trackpool/log.hpp"
#include "trackpool/metrics.hpp"
#include "trackpool/multi_identity.hpp"
#include "trackpool/training.hpp"

namespace fs = std::filesystem;
using namespace trackpool;

namespace {

// Output files created by the running subcommand; removed when it fails so
// callers never see partial results.
std::vector<fs::path> g_outputs;

void track_output(const fs::path& p) { g_outputs.push_back(p); }

void remove_outputs() {
    for (const auto& p : g_outputs) {
        std::error_code ec;
        fs::remove(p, ec);
    }
}

void write_text_file(const fs::path& path, const std::string& content) {
    track_output(path);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write: " + path.string());
    out << content;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

void run_parallel(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t count = std::min(workers, n);
    pool.reserve(count);
    for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

struct SynthOptions {
    SyntheticSpec spec;
    std::string out;
    bool multi = false;
    std::size_t num_videos = 100;
    MultiVideoSpec video;
};

void cmd_synth(const SynthOptions& opt) {
    const auto tracks = gen_synthetic(opt.spec);
    if (!opt.multi) {
        track_output(opt.out);
        write_tracks(opt.out, tracks);
        return;
    }

    const Dataset dataset = group_tracks(tracks);
    Rng rng(opt.spec.seed ^ 0x6d756c7469ull);  // separate stream from gen_synthetic
    std::vector<TrackRecord> videos;
    nlohmann::json truth = nlohmann::json::object();
    for (std::size_t v = 0; v < opt.num_videos; ++v) {
        MultiVideo video = gen_multi_video(dataset, opt.video, rng);
        TrackRecord rec;
        rec.track_id = "video" + std::to_string(v);
        rec.embeddings = video.frames;
        rec.frame_indices.resize(video.frames.rows);
        for (std::size_t i = 0; i < video.frames.rows; ++i)
            rec.frame_indices[i] = static_cast<std::int64_t>(i);
        nlohmann::json entry;
        entry["true_k"] = video.true_k;
        nlohmann::json labels = nlohmann::json::array();
        for (const std::size_t l : video.labels)
            labels.push_back(dataset.identities[l]);
        entry["labels"] = std::move(labels);
        truth[rec.track_id] = std::move(entry);
        videos.push_back(std::move(rec));
    }
    track_output(opt.out);
    write_tracks(opt.out, videos);
    write_text_file(opt.out + ".truth.json", truth.dump(2) + "\n");
}

struct AggregateOptions {
    std::string tracks, out, ckpt, select;
    bool multi = false;
    bool baseline_avg = false;
    double threshold = 0.7;
    std::size_t workers = 1;
    std::uint64_t seed = 0;  // accepted for interface symmetry; path is deterministic
};

TrackRecord template_record(std::string track_id, std::optional<std::string> identity,
                            const Vector& r) {
    TrackRecord rec;
    rec.track_id = std::move(track_id);
    rec.identity = std::move(identity);
    rec.frame_indices = {0};
    rec.embeddings = Matrix(1, r.size());
    for (std::size_t j = 0; j < r.size(); ++j) rec.embeddings(0, j) = r[j];
    return rec;
}

void cmd_aggregate(const AggregateOptions& opt) {
    const auto records = read_tracks(opt.tracks);
    std::optional<ModelWeights> model;
    if (!opt.baseline_avg || opt.multi) {
        if (opt.ckpt.empty())
            throw std::runtime_error("aggregate: --ckpt is required unless --baseline-avg");
        model = load_checkpoint(opt.ckpt);
    }

    if (!opt.multi) {
        std::vector<TrackRecord> templates(records.size());
        run_parallel(records.size(), opt.workers, [&](std::size_t i) {
            const auto& rec = records[i];
            const Vector r = opt.baseline_avg
                                 ? average_pool(rec.embeddings)
                                 : aggregate_track(rec.embeddings, *model).r;
            templates[i] = template_record(rec.track_id, rec.identity, r);
        });
        track_output(opt.out);
        write_tracks(opt.out, templates);
        return;
    }

    // Multi-identity route: one template per discovered track plus a sidecar
    // that maps templates back to their source frames. --select keeps only
    // one component per video instead.
    std::optional<SelectStrategy> strategy;
    if (!opt.select.empty()) strategy = select_strategy_from_string(opt.select);

    std::vector<std::vector<TrackRecord>> per_video(records.size());
    std::vector<nlohmann::json> mapping(records.size());
    run_parallel(records.size(), opt.workers, [&](std::size_t i) {
        const auto& rec = records[i];
        const MultiAggregationResult agg =
            aggregate_multi(rec.embeddings, *model, opt.threshold);
        for (std::size_t t = 0; t < agg.tracks.k(); ++t) {
            if (strategy && t != select_component(agg, rec.embeddings, *strategy))
                continue;
            const std::string id = rec.track_id + "#" + std::to_string(t);
            per_video[i].push_back(template_record(id, rec.identity, agg.results[t].r));
            nlohmann::json frames = nlohmann::json::array();
            for (const std::size_t m : agg.tracks.tracks[t])
                frames.push_back(rec.frame_indices[m]);
            mapping[i][id] = {{"source", rec.track_id}, {"frames", std::move(frames)}};
        }
    });
    std::vector<TrackRecord> templates;
    nlohmann::json map_json = nlohmann::json::object();
    for (std::size_t i = 0; i < records.size(); ++i) {
        for (auto& t : per_video[i]) templates.push_back(std::move(t));
        for (auto& [k, v] : mapping[i].items()) map_json[k] = std::move(v);
    }
    track_output(opt.out);
    write_tracks(opt.out, templates);
    write_text_file(opt.out + ".map.json", map_json.dump(2) + "\n");
}

struct SplitOptions {
    std::string tracks, out;
    double threshold = 0.7;
    std::uint64_t seed = 0;
};

void cmd_split(const SplitOptions& opt) {
    const auto records = read_tracks(opt.tracks);
    std::vector<TrackRecord> out;
    for (const auto& rec : records) {
        const IdentityMask mask = build_mask(rec.embeddings, opt.threshold);
        Vector norms(rec.embeddings.rows);
        for (std::size_t i = 0; i < rec.embeddings.rows; ++i)
            norms[i] = l2_norm(rec.embeddings.row(i));
        const TrackSet tracks = extract_tracks(greedy_postprocess(mask, norms));
        for (std::size_t t = 0; t < tracks.k(); ++t) {
            const auto& members = tracks.tracks[t];
            TrackRecord piece;
            piece.track_id = rec.track_id + "#" + std::to_string(t);
            piece.identity = rec.identity;
            piece.embeddings = Matrix(members.size(), rec.embeddings.cols);
            piece.frame_indices.resize(members.size());
            for (std::size_t i = 0; i < members.size(); ++i) {
                piece.frame_indices[i] = rec.frame_indices[members[i]];
                for (std::size_t j = 0; j < rec.embeddings.cols; ++j)
                    piece.embeddings(i, j) = rec.embeddings(members[i], j);
            }
            out.push_back(std::move(piece));
        }
    }
    track_output(opt.out);
    write_tracks(opt.out, out);
}

struct TrainOptions {
    std::string tracks, out, val;
    bool multi = false;
    TrainConfig cfg;
};

void cmd_train(const TrainOptions& opt) {
    const Dataset dataset = group_tracks(read_tracks(opt.tracks));
    TrainConfig cfg = opt.cfg;
    cfg.encoder.embed_dim = dataset.dim;
    if (cfg.encoder.ffn_hidden == 0) cfg.encoder.ffn_hidden = 4 * dataset.dim;

    const TrainLogger logger = [](const TrainLogEntry& e) {
        std::printf("iteration=%zu loss=%.9g", e.iteration, e.loss);
        if (e.icpg) std::printf(" icpg=%.9g", *e.icpg);
        std::printf("\n");
        std::fflush(stdout);
    };

    TrainResult result;
    if (!opt.val.empty()) {
        const Dataset val = group_tracks(read_tracks(opt.val));
        result = opt.multi ? train_multi(dataset, val, cfg, logger)
                           : train_single(dataset, val, cfg, logger);
    } else {
        result = opt.multi ? train_multi(dataset, cfg, logger)
                           : train_single(dataset, cfg, logger);
    }
    track_output(opt.out);
    save_checkpoint(result.weights, opt.out);
    std::printf("done iterations=%zu best_icpg=%.9g\n", result.iterations_run,
                result.best_icpg);
}

struct EvalOptions {
    std::string tracks, out, roc_out, ckpt, compare, pairs;
    std::size_t workers = 1;
    std::uint64_t seed = 0;
};

std::vector<double> far_levels() { return {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1}; }

// Optional explicit verification protocol: one "id_a,id_b" line per pair,
// matches decided by the identity labels.
std::vector<std::pair<std::size_t, std::size_t>> read_pair_list(
    const fs::path& path, const std::vector<TrackRecord>& records) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < records.size(); ++i)
        index.emplace(records[i].track_id, i);
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open pair list: " + path.string());
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": expected 'id_a,id_b'");
        const std::string a = line.substr(0, comma);
        const std::string b = line.substr(comma + 1);
        const auto ia = index.find(a);
        const auto ib = index.find(b);
        if (ia == index.end() || ib == index.end())
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": unknown track id");
        out.emplace_back(ia->second, ib->second);
    }
    return out;
}

EvalReport evaluate_templates(
    const std::vector<LabeledTemplate>& templates,
    const std::vector<std::pair<std::size_t, std::size_t>>* pair_list,
    RocCurve* curve_out) {
    std::vector<ScoredPair> pairs;
    if (pair_list) {
        pairs.reserve(pair_list->size());
        for (const auto& [a, b] : *pair_list)
            pairs.push_back(
                {cosine_similarity(templates[a].embedding, templates[b].embedding),
                 templates[a].label == templates[b].label});
    } else {
        pairs.reserve(templates.size() * (templates.size() - 1) / 2);
        for (std::size_t i = 0; i < templates.size(); ++i)
            for (std::size_t j = i + 1; j < templates.size(); ++j)
                pairs.push_back(
                    {cosine_similarity(templates[i].embedding, templates[j].embedding),
                     templates[i].label == templates[j].label});
    }

    EvalReport report;
    const RocCurve curve = roc(pairs);
    report.auc = curve.auc;
    for (const double level : far_levels())
        report.tar_at_far[level] = curve.tar_at_far(level);
    if (curve_out) *curve_out = curve;

    // Gallery: first template of each identity in file order; the rest probe.
    std::vector<LabeledTemplate> gallery, probes;
    std::set<std::string> seen;
    for (const auto& t : templates)
        (seen.insert(t.label).second ? gallery : probes).push_back(t);
    if (!probes.empty()) report.rank1 = rank1(probes, gallery);
    return report;
}

void cmd_eval(const EvalOptions& opt) {
    const auto records = read_tracks(opt.tracks);
    if (records.empty()) throw std::runtime_error("eval: no records in " + opt.tracks);
    for (const auto& r : records)
        if (!r.identity)
            throw std::runtime_error("eval: track '" + r.track_id +
                                     "' has no identity label");

    bool pre_aggregated = true;
    for (const auto& r : records)
        if (r.embeddings.rows != 1) pre_aggregated = false;

    if (!opt.compare.empty() && opt.compare != "avg")
        throw std::runtime_error("eval: unsupported --compare value '" + opt.compare +
                                 "' (expected: avg)");
    const bool compare_avg = opt.compare == "avg";

    std::optional<ModelWeights> model;
    if (!pre_aggregated || compare_avg) {
        if (opt.ckpt.empty())
            throw std::runtime_error(
                "eval: --ckpt is required for multi-frame tracks or --compare");
        model = load_checkpoint(opt.ckpt);
    }

    auto make_templates = [&](bool use_avg) {
        std::vector<LabeledTemplate> out(records.size());
        run_parallel(records.size(), opt.workers, [&](std::size_t i) {
            const auto& rec = records[i];
            Vector r;
            if (pre_aggregated && !use_avg)
                r = rec.embeddings.row_vec(0);
            else if (use_avg)
                r = average_pool(rec.embeddings);
            else
                r = aggregate_track(rec.embeddings, *model).r;
            out[i] = {*rec.identity, std::move(r)};
        });
        return out;
    };

    std::vector<std::pair<std::size_t, std::size_t>> pair_list;
    const bool have_pairs = !opt.pairs.empty();
    if (have_pairs) pair_list = read_pair_list(opt.pairs, records);

    std::string text;
    RocCurve curve;
    EvalReport report = evaluate_templates(make_templates(false),
                                           have_pairs ? &pair_list : nullptr, &curve);
    if (!pre_aggregated && model) {
        std::vector<TemplateSample> samples;
        std::map<std::string, std::size_t> class_of;
        for (const auto& rec : records) {
            const auto [it, _] = class_of.try_emplace(*rec.identity, class_of.size());
            samples.push_back({it->second, rec.embeddings});
        }
        report.icpg = icpg(samples, *model);
    }

    if (!compare_avg) {
        text = report.to_text();
    } else {
        RocCurve ave_curve;
        const EvalReport ave = evaluate_templates(
            make_templates(true), have_pairs ? &pair_list : nullptr, &ave_curve);
        auto prefixed = [](const std::string& prefix, const std::string& body) {
            std::string out;
            std::size_t start = 0;
            while (start < body.size()) {
                const std::size_t end = body.find('\n', start);
                out += prefix + body.substr(start, end - start) + "\n";
                start = end + 1;
            }
            return out;
        };
        text = prefixed("sa_", report.to_text()) + prefixed("ave_", ave.to_text());
        char buf[128];
        for (const double level : far_levels()) {
            std::snprintf(buf, sizeof(buf), "delta_tar_at_far@%.9g=%.9g\n", level,
                          report.tar_at_far.at(level) - ave.tar_at_far.at(level));
            text += buf;
        }
        std::snprintf(buf, sizeof(buf), "delta_auc=%.9g\n", report.auc - ave.auc);
        text += buf;
        if (!opt.roc_out.empty())
            write_text_file(opt.roc_out + ".ave.csv", roc_to_csv(ave_curve));
    }

    write_text_file(opt.out, text);
    if (!opt.roc_out.empty()) write_text_file(opt.roc_out, roc_to_csv(curve));
    std::fputs(text.c_str(), stdout);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"trackpool: self-attention aggregation of face-track embeddings"};
    app.require_subcommand(1);

    // --- synth ---
    SynthOptions synth;
    auto* synth_cmd = app.add_subcommand("synth", "generate synthetic datasets");
    synth_cmd->add_option("--out", synth.out, "output track file")->required();
    synth_cmd->add_option("--identities", synth.spec.num_identities, "identity count");
    synth_cmd->add_option("--sessions", synth.spec.sessions_per_identity,
                          "sessions per identity");
    synth_cmd->add_option("--frames", synth.spec.frames_per_session,
                          "frames per session");
    synth_cmd->add_option("--dim", synth.spec.embed_dim, "embedding dim");
    synth_cmd->add_option("--sigma", synth.spec.noise_sigma, "intra-class noise");
    synth_cmd->add_option("--degraded", synth.spec.quality_degradation,
                          "fraction of degraded frames");
    synth_cmd->add_option("--min-separation", synth.spec.min_centroid_distance,
                          "min pairwise centroid cosine distance");
    synth_cmd->add_option("--seed", synth.spec.seed, "rng seed");
    synth_cmd->add_flag("--multi", synth.multi, "emit multi-identity videos");
    synth_cmd->add_option("--videos", synth.num_videos, "video count (with --multi)");
    synth_cmd->add_option("--min-identities", synth.video.min_identities,
                          "min identities per video");
    synth_cmd->add_option("--max-identities", synth.video.max_identities,
                          "max identities per video");
    synth_cmd->add_option("--frames-sampled", synth.video.frames_sampled,
                          "frames sampled per video");

    // --- aggregate ---
    AggregateOptions agg;
    auto* agg_cmd = app.add_subcommand("aggregate", "pool tracks into templates");
    agg_cmd->add_option("--tracks", agg.tracks, "input track file")->required();
    agg_cmd->add_option("--out", agg.out, "output template file")->required();
    agg_cmd->add_option("--ckpt", agg.ckpt, "model checkpoint");
    agg_cmd->add_flag("--multi", agg.multi, "treat each record as a multi-identity video");
    agg_cmd->add_flag("--baseline-avg", agg.baseline_avg, "average pooling baseline");
    agg_cmd->add_option("--threshold", agg.threshold,
                        "cosine-distance threshold for the identity mask");
    agg_cmd->add_option("--select", agg.select,
                        "with --multi, keep one component per video"
                        " (highest_norm|biggest)");
    agg_cmd->add_option("--workers", agg.workers, "worker threads");
    agg_cmd->add_option("--seed", agg.seed, "rng seed (aggregation is deterministic)");

    // --- split ---
    SplitOptions split;
    auto* split_cmd =
        app.add_subcommand("split", "decompose multi-identity videos into tracks");
    split_cmd->add_option("--tracks", split.tracks, "input video file")->required();
    split_cmd->add_option("--out", split.out, "output track file")->required();
    split_cmd->add_option("--threshold", split.threshold,
                          "cosine-distance threshold for the identity mask");
    split_cmd->add_option("--seed", split.seed, "rng seed (split is deterministic)");

    // --- train ---
    TrainOptions train;
    std::string score_mode = "element";
    bool no_pos_enc = false;
    bool angular = false;
    auto* train_cmd = app.add_subcommand("train", "train the aggregation model");
    train_cmd->add_option("--tracks", train.tracks, "training track file")->required();
    train_cmd->add_option("--out", train.out, "output checkpoint")->required();
    train_cmd->add_option("--val", train.val, "validation track file");
    train_cmd->add_flag("--multi", train.multi, "multi-identity training");
    train_cmd->add_option("--depth", train.cfg.encoder.num_blocks, "encoder blocks");
    train_cmd->add_option("--heads", train.cfg.encoder.num_heads, "attention heads");
    train_cmd->add_option("--ffn-hidden", train.cfg.encoder.ffn_hidden,
                          "FFN hidden dim (0 = 4*dim)");
    train_cmd->add_option("--attention-dropout", train.cfg.encoder.attention_dropout,
                          "attention dropout rate");
    train_cmd->add_option("--relu-dropout", train.cfg.encoder.relu_dropout,
                          "FFN dropout rate");
    train_cmd->add_flag("--no-pos-enc", no_pos_enc, "disable positional encoding");
    train_cmd->add_option("--score-mode", score_mode, "element|component");
    train_cmd->add_option("--scale", train.cfg.loss.scale, "hypersphere radius");
    train_cmd->add_option("--margin", train.cfg.loss.margin, "additive margin");
    train_cmd->add_flag("--angular-margin", angular,
                        "use s*cos(theta+m) instead of s*(cos(theta)-m)");
    train_cmd->add_option("--lr", train.cfg.optimizer.lr, "learning rate");
    train_cmd->add_option("--iterations", train.cfg.max_iterations, "max iterations");
    train_cmd->add_option("--eval-every", train.cfg.eval_every, "ICPG eval interval");
    train_cmd->add_option("--patience", train.cfg.patience,
                          "non-improving evals before stopping");
    train_cmd->add_option("--val-fraction", train.cfg.val_fraction,
                          "identity fraction held out when --val is absent");
    train_cmd->add_option("--templates-per-batch", train.cfg.batch.templates_per_batch,
                          "templates per mini-batch");
    train_cmd->add_option("--identities-per-batch",
                          train.cfg.batch.identities_per_batch,
                          "identities per mini-batch");
    train_cmd->add_option("--frames-per-template", train.cfg.batch.frames_per_template,
                          "frames per template");
    train_cmd->add_option("--horizon", train.cfg.sampling.horizon,
                          "scheduled-sampling horizon (--multi)");
    train_cmd->add_option("--threshold", train.cfg.mask_threshold,
                          "mask threshold (--multi)");
    train_cmd->add_option("--min-identities", train.cfg.video.min_identities,
                          "min identities per video (--multi)");
    train_cmd->add_option("--max-identities", train.cfg.video.max_identities,
                          "max identities per video (--multi)");
    train_cmd->add_option("--frames-sampled", train.cfg.video.frames_sampled,
                          "frames per video (--multi)");
    train_cmd->add_option("--videos-per-batch", train.cfg.videos_per_batch,
                          "videos per iteration (--multi)");
    train_cmd->add_option("--seed", train.cfg.seed, "rng seed");

    // --- eval ---
    EvalOptions eval;
    auto* eval_cmd = app.add_subcommand("eval", "verification/identification metrics");
    eval_cmd->add_option("--tracks", eval.tracks, "labeled templates or tracks")
        ->required();
    eval_cmd->add_option("--out", eval.out, "report output file")->required();
    eval_cmd->add_option("--roc-out", eval.roc_out, "ROC CSV output file");
    eval_cmd->add_option("--ckpt", eval.ckpt, "model checkpoint");
    eval_cmd->add_option("--compare", eval.compare,
                         "also evaluate a baseline pooling (value: avg)");
    eval_cmd->add_option("--pairs", eval.pairs,
                         "verification pair list (id_a,id_b per line); default is"
                         " all labeled template pairs");
    eval_cmd->add_option("--workers", eval.workers, "worker threads");
    eval_cmd->add_option("--seed", eval.seed, "rng seed (evaluation is deterministic)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth_cmd->parsed()) cmd_synth(synth);
        if (agg_cmd->parsed()) cmd_aggregate(agg);
        if (split_cmd->parsed()) cmd_split(split);
        if (train_cmd->parsed()) {
            train.cfg.score_mode = score_mode_from_string(score_mode);
            train.cfg.encoder.use_positional_encoding = !no_pos_enc;
            train.cfg.loss.margin_type = angular ? MarginType::kAdditiveAngular
                                                 : MarginType::kAdditiveCosine;
            cmd_train(train);
        }
        if (eval_cmd->parsed()) cmd_eval(eval);
    } catch (const std::exception& e) {
        remove_outputs();
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
