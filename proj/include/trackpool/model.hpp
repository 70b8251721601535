#pragma once

#include <string>
#include <vector>

#include "trackpool/linalg.hpp"
#include "trackpool/rng.hpp"

namespace trackpool {

struct EncoderConfig {
    std::size_t embed_dim = 64;
    std::size_t num_heads = 8;
    std::size_t num_blocks = 4;
    std::size_t ffn_hidden = 0;  // 0 means 4 * embed_dim
    double attention_dropout = 0.3;
    double relu_dropout = 0.4;
    bool use_positional_encoding = true;
    double layer_norm_eps = 1e-6;

    std::size_t head_dim() const { return embed_dim / num_heads; }
    std::size_t ffn_dim() const { return ffn_hidden ? ffn_hidden : 4 * embed_dim; }
    void validate() const;
};

/// One self-attention block: per-head K/Q/V projections (embed_dim x head_dim
/// each), output matrix, position-wise FFN and two layer norms.
struct AttentionBlockWeights {
    std::vector<Matrix> w_q, w_k, w_v;  // num_heads matrices, d x d/h
    Matrix w_o;                         // d x d
    Matrix ffn_w1;                       // d x ffn
    Vector ffn_b1;                       // ffn
    Matrix ffn_w2;                       // ffn x d
    Vector ffn_b2;                       // d
    Vector ln1_gain, ln1_bias;           // d
    Vector ln2_gain, ln2_bias;           // d
};

enum class ScoreMode { kElement, kComponent };

const char* to_string(ScoreMode mode);
ScoreMode score_mode_from_string(const std::string& s);

/// Learnable quality-score head: d x 1 in element-wise mode, d x d in
/// component-wise mode.
struct QualityHead {
    ScoreMode mode = ScoreMode::kElement;
    Matrix w;

    void validate(std::size_t embed_dim) const;
};

struct ModelWeights {
    EncoderConfig cfg;
    std::vector<AttentionBlockWeights> blocks;
    QualityHead head;

    void validate() const;
};

// Xavier-style random initialization; gains start at 1, biases at 0.
ModelWeights init_model(const EncoderConfig& cfg, ScoreMode mode, Rng& rng);

// Same structure with every tensor zeroed (gradient accumulator).
ModelWeights zeros_like(const ModelWeights& w);

struct ParamRef {
    std::string name;
    std::vector<double>* data;
};

// All learnable tensors in the fixed serialization order: per block
// w_q[0..h), w_k[0..h), w_v[0..h), w_o, ffn_w1, ffn_b1, ffn_w2, ffn_b2,
// ln1_gain, ln1_bias, ln2_gain, ln2_bias; then the quality head.
std::vector<ParamRef> param_refs(ModelWeights& w);

std::size_t num_params(const ModelWeights& w);

}  // namespace trackpool
