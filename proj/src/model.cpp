#include "trackpool/model.hpp"

#include <cmath>
#include <stdexcept>

namespace trackpool {

void EncoderConfig::validate() const {
    if (embed_dim == 0) throw std::invalid_argument("EncoderConfig: embed_dim must be > 0");
    if (num_heads == 0 || embed_dim % num_heads != 0)
        throw std::invalid_argument("EncoderConfig: embed_dim (" +
                                    std::to_string(embed_dim) +
                                    ") must be divisible by num_heads (" +
                                    std::to_string(num_heads) + ")");
    if (num_blocks == 0) throw std::invalid_argument("EncoderConfig: num_blocks must be >= 1");
    if (attention_dropout < 0.0 || attention_dropout >= 1.0 ||
        relu_dropout < 0.0 || relu_dropout >= 1.0)
        throw std::invalid_argument("EncoderConfig: dropout rates must be in [0, 1)");
    if (layer_norm_eps <= 0.0)
        throw std::invalid_argument("EncoderConfig: layer_norm_eps must be > 0");
}

const char* to_string(ScoreMode mode) {
    return mode == ScoreMode::kElement ? "element" : "component";
}

ScoreMode score_mode_from_string(const std::string& s) {
    if (s == "element") return ScoreMode::kElement;
    if (s == "component") return ScoreMode::kComponent;
    throw std::invalid_argument("unknown score mode '" + s +
                                "' (expected element|component)");
}

void QualityHead::validate(std::size_t embed_dim) const {
    const std::size_t want_cols = mode == ScoreMode::kElement ? 1 : embed_dim;
    if (w.rows != embed_dim || w.cols != want_cols)
        throw std::invalid_argument("QualityHead: weight is " + std::to_string(w.rows) +
                                    "x" + std::to_string(w.cols) + ", expected " +
                                    std::to_string(embed_dim) + "x" +
                                    std::to_string(want_cols));
}

void ModelWeights::validate() const {
    cfg.validate();
    if (blocks.size() != cfg.num_blocks)
        throw std::invalid_argument("ModelWeights: expected " +
                                    std::to_string(cfg.num_blocks) + " blocks, have " +
                                    std::to_string(blocks.size()));
    const std::size_t d = cfg.embed_dim;
    const std::size_t dh = cfg.head_dim();
    const std::size_t ffn = cfg.ffn_dim();
    for (const auto& b : blocks) {
        if (b.w_q.size() != cfg.num_heads || b.w_k.size() != cfg.num_heads ||
            b.w_v.size() != cfg.num_heads)
            throw std::invalid_argument("ModelWeights: per-head projection count mismatch");
        for (std::size_t h = 0; h < cfg.num_heads; ++h) {
            if (b.w_q[h].rows != d || b.w_q[h].cols != dh ||
                b.w_k[h].rows != d || b.w_k[h].cols != dh ||
                b.w_v[h].rows != d || b.w_v[h].cols != dh)
                throw std::invalid_argument("ModelWeights: head projection shape mismatch");
        }
        if (b.w_o.rows != d || b.w_o.cols != d ||
            b.ffn_w1.rows != d || b.ffn_w1.cols != ffn || b.ffn_b1.size() != ffn ||
            b.ffn_w2.rows != ffn || b.ffn_w2.cols != d || b.ffn_b2.size() != d ||
            b.ln1_gain.size() != d || b.ln1_bias.size() != d ||
            b.ln2_gain.size() != d || b.ln2_bias.size() != d)
            throw std::invalid_argument("ModelWeights: block tensor shape mismatch");
    }
    head.validate(d);
}

namespace {

Matrix xavier(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    const double stddev = std::sqrt(2.0 / static_cast<double>(rows + cols));
    for (double& v : m.data) v = stddev * rng.normal();
    return m;
}

}  // namespace

ModelWeights init_model(const EncoderConfig& cfg, ScoreMode mode, Rng& rng) {
    cfg.validate();
    const std::size_t d = cfg.embed_dim;
    const std::size_t dh = cfg.head_dim();
    const std::size_t ffn = cfg.ffn_dim();

    ModelWeights w;
    w.cfg = cfg;
    w.blocks.resize(cfg.num_blocks);
    for (auto& b : w.blocks) {
        for (std::size_t h = 0; h < cfg.num_heads; ++h) {
            b.w_q.push_back(xavier(d, dh, rng));
            b.w_k.push_back(xavier(d, dh, rng));
            b.w_v.push_back(xavier(d, dh, rng));
        }
        b.w_o = xavier(d, d, rng);
        b.ffn_w1 = xavier(d, ffn, rng);
        b.ffn_b1 = Vector(ffn, 0.0);
        b.ffn_w2 = xavier(ffn, d, rng);
        b.ffn_b2 = Vector(d, 0.0);
        b.ln1_gain = Vector(d, 1.0);
        b.ln1_bias = Vector(d, 0.0);
        b.ln2_gain = Vector(d, 1.0);
        b.ln2_bias = Vector(d, 0.0);
    }
    w.head.mode = mode;
    w.head.w = xavier(d, mode == ScoreMode::kElement ? 1 : d, rng);
    return w;
}

ModelWeights zeros_like(const ModelWeights& w) {
    ModelWeights z = w;
    for (auto& b : z.blocks) {
        for (auto& m : b.w_q) m.data.assign(m.data.size(), 0.0);
        for (auto& m : b.w_k) m.data.assign(m.data.size(), 0.0);
        for (auto& m : b.w_v) m.data.assign(m.data.size(), 0.0);
        b.w_o.data.assign(b.w_o.data.size(), 0.0);
        b.ffn_w1.data.assign(b.ffn_w1.data.size(), 0.0);
        b.ffn_b1.assign(b.ffn_b1.size(), 0.0);
        b.ffn_w2.data.assign(b.ffn_w2.data.size(), 0.0);
        b.ffn_b2.assign(b.ffn_b2.size(), 0.0);
        b.ln1_gain.assign(b.ln1_gain.size(), 0.0);
        b.ln1_bias.assign(b.ln1_bias.size(), 0.0);
        b.ln2_gain.assign(b.ln2_gain.size(), 0.0);
        b.ln2_bias.assign(b.ln2_bias.size(), 0.0);
    }
    z.head.w.data.assign(z.head.w.data.size(), 0.0);
    return z;
}

std::vector<ParamRef> param_refs(ModelWeights& w) {
    std::vector<ParamRef> refs;
    for (std::size_t b = 0; b < w.blocks.size(); ++b) {
        auto& blk = w.blocks[b];
        const std::string prefix = "block" + std::to_string(b) + ".";
        for (std::size_t h = 0; h < blk.w_q.size(); ++h)
            refs.push_back({prefix + "w_q" + std::to_string(h), &blk.w_q[h].data});
        for (std::size_t h = 0; h < blk.w_k.size(); ++h)
            refs.push_back({prefix + "w_k" + std::to_string(h), &blk.w_k[h].data});
        for (std::size_t h = 0; h < blk.w_v.size(); ++h)
            refs.push_back({prefix + "w_v" + std::to_string(h), &blk.w_v[h].data});
        refs.push_back({prefix + "w_o", &blk.w_o.data});
        refs.push_back({prefix + "ffn_w1", &blk.ffn_w1.data});
        refs.push_back({prefix + "ffn_b1", &blk.ffn_b1});
        refs.push_back({prefix + "ffn_w2", &blk.ffn_w2.data});
        refs.push_back({prefix + "ffn_b2", &blk.ffn_b2});
        refs.push_back({prefix + "ln1_gain", &blk.ln1_gain});
        refs.push_back({prefix + "ln1_bias", &blk.ln1_bias});
        refs.push_back({prefix + "ln2_gain", &blk.ln2_gain});
        refs.push_back({prefix + "ln2_bias", &blk.ln2_bias});
    }
    refs.push_back({"quality.w", &w.head.w.data});
    return refs;
}

std::size_t num_params(const ModelWeights& w) {
    std::size_t n = 0;
    for (const auto& r : param_refs(const_cast<ModelWeights&>(w))) n += r.data->size();
    return n;
}

}  // namespace trackpool
