#pragma once

#include <cstdint>
#include <vector>

#include "trackpool/linalg.hpp"
#include "trackpool/model.hpp"
#include "trackpool/rng.hpp"

namespace trackpool {

enum class EncodeMode { kInfer, kTrain };

// Sinusoidal positional encoding: entry (pos, 2i)   = sin(pos / 10000^(2i/d)),
//                                 entry (pos, 2i+1) = cos(pos / 10000^(2i/d)).
// d must be even.
Matrix positional_encoding(std::size_t n, std::size_t d);

// Single attention head: row_softmax(Q K^T / sqrt(d_head)) V with
// Q = fp*w_q, K = fp*w_k, V = fp*w_v.
Matrix attention_head(const Matrix& fp, const Matrix& w_q, const Matrix& w_k,
                      const Matrix& w_v);

// Concat of all head outputs along the feature axis, times w_o. No dropout.
Matrix multi_head(const Matrix& fp, const AttentionBlockWeights& w);

struct LayerNormTrace {
    Matrix xhat;      // normalized pre-affine values, n x d
    Vector inv_std;   // per row
};

struct HeadTrace {
    Matrix q, k, v;        // n x d_head
    Matrix attn;           // n x n, post-softmax
    Matrix attn_drop_mask; // empty when dropout off; entries 0 or 1/(1-p)
};

struct BlockTrace {
    Matrix x_in;
    std::vector<HeadTrace> heads;
    Matrix concat;          // n x d
    Matrix mh;              // concat * w_o
    LayerNormTrace ln1;
    Matrix y;               // ln1 output
    Matrix h1;              // pre-ReLU FFN hidden
    Matrix relu_drop_mask;  // empty when dropout off
    Matrix h2;              // FFN output
    LayerNormTrace ln2;
    Matrix z;               // block output
};

struct EncoderTrace {
    Matrix x0;  // encoder input after optional positional encoding
    std::vector<BlockTrace> blocks;
};

// Full encoder stack. Adds positional encoding once at the input when
// enabled, then num_blocks post-layer-norm blocks:
//   y = ln1(x + multi_head(x)),  z = ln2(y + ffn(y)).
// Dropout (train mode only) is applied to the post-softmax attention
// weights and to the post-ReLU FFN activations, using the passed generator.
// Rows at index >= n_valid are padding: they are excluded from attention
// and the corresponding output rows are zero.
Matrix encode(const Matrix& f, const EncoderConfig& cfg,
              const std::vector<AttentionBlockWeights>& blocks,
              EncodeMode mode = EncodeMode::kInfer, Rng* rng = nullptr,
              std::size_t n_valid = SIZE_MAX, EncoderTrace* trace = nullptr);

Matrix encode(const Matrix& f, const ModelWeights& w,
              EncodeMode mode = EncodeMode::kInfer, Rng* rng = nullptr,
              std::size_t n_valid = SIZE_MAX, EncoderTrace* trace = nullptr);

}  // namespace trackpool
