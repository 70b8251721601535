#include "trackpool/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace trackpool {

Matrix positional_encoding(std::size_t n, std::size_t d) {
    if (n == 0) throw std::invalid_argument("positional_encoding: n must be >= 1");
    if (d == 0 || d % 2 != 0)
        throw std::invalid_argument("positional_encoding: d must be even, got " +
                                    std::to_string(d));
    Matrix p(n, d);
    for (std::size_t pos = 0; pos < n; ++pos) {
        for (std::size_t i = 0; i < d / 2; ++i) {
            const double angle =
                static_cast<double>(pos) /
                std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d));
            p(pos, 2 * i) = std::sin(angle);
            p(pos, 2 * i + 1) = std::cos(angle);
        }
    }
    return p;
}

namespace {

// Inverted dropout mask: entries are 0 with probability p, else 1/(1-p).
Matrix dropout_mask(std::size_t rows, std::size_t cols, double p, Rng& rng) {
    Matrix m(rows, cols);
    const double keep = 1.0 / (1.0 - p);
    for (double& v : m.data) v = rng.uniform() < p ? 0.0 : keep;
    return m;
}

void mul_in_place(Matrix& a, const Matrix& mask) {
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] *= mask.data[i];
}

Matrix scaled_attention(const Matrix& q, const Matrix& k) {
    Matrix logits = matmul_nt(q, k);
    scale_in_place(logits, 1.0 / std::sqrt(static_cast<double>(q.cols)));
    return row_softmax(logits);
}

Matrix layer_norm_rows(const Matrix& x, const Vector& gain, const Vector& bias,
                       double eps, LayerNormTrace* tr) {
    Matrix out(x.rows, x.cols);
    if (tr) {
        tr->xhat = Matrix(x.rows, x.cols);
        tr->inv_std.assign(x.rows, 0.0);
    }
    const double n = static_cast<double>(x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double mean = 0.0;
        for (double v : x.row(i)) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : x.row(i)) var += (v - mean) * (v - mean);
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < x.cols; ++j) {
            const double xhat = (x(i, j) - mean) * inv;
            if (tr) tr->xhat(i, j) = xhat;
            out(i, j) = xhat * gain[j] + bias[j];
        }
        if (tr) tr->inv_std[i] = inv;
    }
    return out;
}

Matrix block_forward(const Matrix& x, const AttentionBlockWeights& w,
                     const EncoderConfig& cfg, EncodeMode mode, Rng* rng,
                     BlockTrace* tr) {
    const std::size_t n = x.rows;
    const std::size_t d = cfg.embed_dim;
    const std::size_t dh = cfg.head_dim();
    const bool train = mode == EncodeMode::kTrain;

    if (tr) {
        tr->x_in = x;
        tr->heads.resize(cfg.num_heads);
    }

    Matrix concat(n, d);
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        Matrix q = matmul(x, w.w_q[h]);
        Matrix k = matmul(x, w.w_k[h]);
        Matrix v = matmul(x, w.w_v[h]);
        Matrix attn = scaled_attention(q, k);
        Matrix attn_used = attn;
        Matrix mask;
        if (train && cfg.attention_dropout > 0.0) {
            mask = dropout_mask(n, n, cfg.attention_dropout, *rng);
            mul_in_place(attn_used, mask);
        }
        Matrix head_out = matmul(attn_used, v);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < dh; ++j) concat(i, h * dh + j) = head_out(i, j);
        if (tr) {
            auto& ht = tr->heads[h];
            ht.q = std::move(q);
            ht.k = std::move(k);
            ht.v = std::move(v);
            ht.attn = std::move(attn);
            ht.attn_drop_mask = std::move(mask);
        }
    }

    Matrix mh = matmul(concat, w.w_o);
    Matrix res1 = add(x, mh);
    Matrix y = layer_norm_rows(res1, w.ln1_gain, w.ln1_bias, cfg.layer_norm_eps,
                               tr ? &tr->ln1 : nullptr);

    Matrix h1 = matmul(y, w.ffn_w1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < h1.cols; ++j) h1(i, j) += w.ffn_b1[j];
    Matrix activated = h1;
    for (double& v : activated.data) v = v > 0.0 ? v : 0.0;
    Matrix relu_mask;
    if (train && cfg.relu_dropout > 0.0) {
        relu_mask = dropout_mask(n, h1.cols, cfg.relu_dropout, *rng);
        mul_in_place(activated, relu_mask);
    }
    Matrix h2 = matmul(activated, w.ffn_w2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) h2(i, j) += w.ffn_b2[j];

    Matrix res2 = add(y, h2);
    Matrix z = layer_norm_rows(res2, w.ln2_gain, w.ln2_bias, cfg.layer_norm_eps,
                               tr ? &tr->ln2 : nullptr);

    if (tr) {
        tr->concat = std::move(concat);
        tr->mh = std::move(mh);
        tr->y = std::move(y);
        tr->h1 = std::move(h1);
        tr->relu_drop_mask = std::move(relu_mask);
        tr->h2 = std::move(h2);
        tr->z = z;
    }
    return z;
}

}  // namespace

Matrix attention_head(const Matrix& fp, const Matrix& w_q, const Matrix& w_k,
                      const Matrix& w_v) {
    if (fp.empty()) throw std::invalid_argument("attention_head: empty input");
    Matrix attn = scaled_attention(matmul(fp, w_q), matmul(fp, w_k));
    return matmul(attn, matmul(fp, w_v));
}

Matrix multi_head(const Matrix& fp, const AttentionBlockWeights& w) {
    if (w.w_q.empty()) throw std::invalid_argument("multi_head: no heads configured");
    const std::size_t n = fp.rows;
    const std::size_t dh = w.w_q[0].cols;
    Matrix concat(n, w.w_q.size() * dh);
    for (std::size_t h = 0; h < w.w_q.size(); ++h) {
        Matrix out = attention_head(fp, w.w_q[h], w.w_k[h], w.w_v[h]);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < dh; ++j) concat(i, h * dh + j) = out(i, j);
    }
    return matmul(concat, w.w_o);
}

Matrix encode(const Matrix& f, const EncoderConfig& cfg,
              const std::vector<AttentionBlockWeights>& blocks, EncodeMode mode,
              Rng* rng, std::size_t n_valid, EncoderTrace* trace) {
    cfg.validate();
    if (f.rows == 0) throw std::invalid_argument("encode: empty track");
    if (f.cols != cfg.embed_dim)
        throw std::invalid_argument("encode: input has dim " + std::to_string(f.cols) +
                                    ", config expects " + std::to_string(cfg.embed_dim));
    if (blocks.size() != cfg.num_blocks)
        throw std::invalid_argument("encode: expected " + std::to_string(cfg.num_blocks) +
                                    " blocks, got " + std::to_string(blocks.size()));
    if (mode == EncodeMode::kTrain &&
        (cfg.attention_dropout > 0.0 || cfg.relu_dropout > 0.0) && rng == nullptr)
        throw std::invalid_argument("encode: train mode with dropout needs an rng");
    if (!all_finite(f)) throw std::invalid_argument("encode: non-finite input");

    const std::size_t n = std::min<std::size_t>(n_valid, f.rows);
    if (n == 0) throw std::invalid_argument("encode: no valid rows");

    // Padded rows carry no information; attention over the valid prefix is
    // identical to masking padded positions with -inf logits.
    Matrix x(n, f.cols);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f.cols; ++j) x(i, j) = f(i, j);

    if (cfg.use_positional_encoding) add_in_place(x, positional_encoding(n, cfg.embed_dim));
    if (trace) {
        trace->x0 = x;
        trace->blocks.resize(cfg.num_blocks);
    }

    for (std::size_t b = 0; b < cfg.num_blocks; ++b)
        x = block_forward(x, blocks[b], cfg, mode, rng,
                          trace ? &trace->blocks[b] : nullptr);

    if (n == f.rows) return x;
    Matrix out(f.rows, f.cols);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f.cols; ++j) out(i, j) = x(i, j);
    return out;
}

Matrix encode(const Matrix& f, const ModelWeights& w, EncodeMode mode, Rng* rng,
              std::size_t n_valid, EncoderTrace* trace) {
    return encode(f, w.cfg, w.blocks, mode, rng, n_valid, trace);
}

}  // namespace trackpool
