#include "trackpool/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "trackpool/log.hpp"
#include "trackpool/multi_identity.hpp"

namespace trackpool {

void LossConfig::validate() const {
    if (scale <= 0.0) throw std::invalid_argument("LossConfig: scale must be > 0");
    if (margin < 0.0 || margin >= 1.0)
        throw std::invalid_argument("LossConfig: margin must be in [0, 1)");
    if (num_classes == 0) throw std::invalid_argument("LossConfig: num_classes must be > 0");
}

namespace {

constexpr double kCosGuard = 1.0 - 1e-7;

Vector normalized_copy(const Vector& v, const char* what) {
    const double n = l2_norm(v);
    if (n == 0.0) throw std::invalid_argument(std::string(what) + ": zero vector");
    Vector out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

}  // namespace

double aam_loss(const Vector& r, const Matrix& class_weights, std::size_t label,
                const LossConfig& cfg, Vector* d_r, Matrix* d_class_weights) {
    cfg.validate();
    if (class_weights.rows != cfg.num_classes || class_weights.cols != r.size())
        throw std::invalid_argument(
            "aam_loss: class weights are " + std::to_string(class_weights.rows) + "x" +
            std::to_string(class_weights.cols) + ", expected " +
            std::to_string(cfg.num_classes) + "x" + std::to_string(r.size()));
    if (label >= cfg.num_classes)
        throw std::invalid_argument("aam_loss: label " + std::to_string(label) +
                                    " out of range (num_classes=" +
                                    std::to_string(cfg.num_classes) + ")");

    const std::size_t d = r.size();
    const std::size_t c = cfg.num_classes;
    const double r_norm = l2_norm(r);
    if (r_norm == 0.0) throw std::invalid_argument("aam_loss: zero template vector");

    Vector r_hat(d);
    for (std::size_t i = 0; i < d; ++i) r_hat[i] = r[i] / r_norm;

    std::vector<double> w_norm(c);
    Vector cosines(c);
    for (std::size_t j = 0; j < c; ++j) {
        w_norm[j] = l2_norm(class_weights.row(j));
        if (w_norm[j] == 0.0)
            throw std::invalid_argument("aam_loss: zero class weight row " +
                                        std::to_string(j));
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) acc += r_hat[i] * class_weights(j, i);
        cosines[j] = acc / w_norm[j];
    }

    // Logits: s * cos(theta_j), with the margin applied to the target class.
    Vector logits(c);
    double target_dcos_scale = cfg.scale;  // d z_label / d cos(theta_label)
    for (std::size_t j = 0; j < c; ++j) logits[j] = cfg.scale * cosines[j];
    if (cfg.margin_type == MarginType::kAdditiveCosine) {
        logits[label] = cfg.scale * (cosines[label] - cfg.margin);
    } else {
        const double ct = std::clamp(cosines[label], -kCosGuard, kCosGuard);
        const double st = std::sqrt(1.0 - ct * ct);
        logits[label] = cfg.scale * (ct * std::cos(cfg.margin) - st * std::sin(cfg.margin));
        target_dcos_scale =
            cfg.scale * (std::cos(cfg.margin) + std::sin(cfg.margin) * ct / st);
    }

    const double max_logit = *std::max_element(logits.begin(), logits.end());
    double sum_exp = 0.0;
    for (double z : logits) sum_exp += std::exp(z - max_logit);
    const double loss = -(logits[label] - max_logit) + std::log(sum_exp);

    if (!d_r && !d_class_weights) return loss;

    // dL/dz = softmax(z) - onehot(label)
    Vector dz(c);
    for (std::size_t j = 0; j < c; ++j) dz[j] = std::exp(logits[j] - max_logit) / sum_exp;
    dz[label] -= 1.0;

    Vector dcos(c);
    for (std::size_t j = 0; j < c; ++j)
        dcos[j] = dz[j] * (j == label ? target_dcos_scale : cfg.scale);

    if (d_r) {
        // cos_j = dot(r_hat, w_hat_j); back through the normalization of r.
        Vector d_rhat(d, 0.0);
        for (std::size_t j = 0; j < c; ++j) {
            const double f = dcos[j] / w_norm[j];
            for (std::size_t i = 0; i < d; ++i) d_rhat[i] += f * class_weights(j, i);
        }
        const double proj = dot(d_rhat, r_hat);
        d_r->assign(d, 0.0);
        for (std::size_t i = 0; i < d; ++i)
            (*d_r)[i] = (d_rhat[i] - proj * r_hat[i]) / r_norm;
    }

    if (d_class_weights) {
        if (d_class_weights->rows != c || d_class_weights->cols != d)
            throw std::invalid_argument("aam_loss: gradient accumulator shape mismatch");
        for (std::size_t j = 0; j < c; ++j) {
            // w_hat_j = w_j / |w_j|; d cos_j / d w_j projects out the radial part.
            const double inv = 1.0 / w_norm[j];
            double proj = 0.0;
            for (std::size_t i = 0; i < d; ++i)
                proj += r_hat[i] * class_weights(j, i) * inv;
            for (std::size_t i = 0; i < d; ++i) {
                const double w_hat = class_weights(j, i) * inv;
                (*d_class_weights)(j, i) += dcos[j] * (r_hat[i] - proj * w_hat) * inv;
            }
        }
    }
    return loss;
}

AggregationResult forward_template(const Matrix& f, const ModelWeights& w,
                                   EncodeMode mode, Rng* rng, TemplateTrace* trace) {
    EncoderTrace* enc_trace = trace ? &trace->encoder : nullptr;
    const Matrix rmh = encode(f, w, mode, rng, SIZE_MAX, enc_trace);
    AggregationResult agg = aggregate(f, rmh, w.head);
    if (trace) {
        trace->f = f;
        trace->agg = agg;
    }
    return agg;
}

namespace {

// ds = q * (dq - dot(dq, q)), the softmax Jacobian-vector product.
void softmax_column_backward(const Matrix& q, const Matrix& dq, Matrix& ds) {
    for (std::size_t c = 0; c < q.cols; ++c) {
        double inner = 0.0;
        for (std::size_t i = 0; i < q.rows; ++i) inner += dq(i, c) * q(i, c);
        for (std::size_t i = 0; i < q.rows; ++i)
            ds(i, c) = q(i, c) * (dq(i, c) - inner);
    }
}

void softmax_row_backward(const Matrix& probs, const Matrix& dprobs, Matrix& dlogits) {
    for (std::size_t i = 0; i < probs.rows; ++i) {
        double inner = 0.0;
        for (std::size_t j = 0; j < probs.cols; ++j) inner += dprobs(i, j) * probs(i, j);
        for (std::size_t j = 0; j < probs.cols; ++j)
            dlogits(i, j) = probs(i, j) * (dprobs(i, j) - inner);
    }
}

// dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat . xhat)) per row.
Matrix layer_norm_backward(const Matrix& dy, const LayerNormTrace& tr,
                           const Vector& gain, Vector& dgain, Vector& dbias) {
    const std::size_t n = dy.rows, d = dy.cols;
    Matrix dx(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double dxhat = dy(i, j) * gain[j];
            m1 += dxhat;
            m2 += dxhat * tr.xhat(i, j);
            dgain[j] += dy(i, j) * tr.xhat(i, j);
            dbias[j] += dy(i, j);
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        const double inv = tr.inv_std[i];
        for (std::size_t j = 0; j < d; ++j) {
            const double dxhat = dy(i, j) * gain[j];
            dx(i, j) = inv * (dxhat - m1 - tr.xhat(i, j) * m2);
        }
    }
    return dx;
}

void apply_mask(Matrix& m, const Matrix& mask) {
    if (mask.data.empty()) return;
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] *= mask.data[i];
}

Matrix block_backward(const Matrix& dz_in, const BlockTrace& tr,
                      const AttentionBlockWeights& w, AttentionBlockWeights& g,
                      const EncoderConfig& cfg) {
    const std::size_t n = tr.x_in.rows;
    const std::size_t d = cfg.embed_dim;
    const std::size_t dh = cfg.head_dim();

    // ln2 -> res2 = y + h2
    Matrix dres2 = layer_norm_backward(dz_in, tr.ln2, w.ln2_gain, g.ln2_gain, g.ln2_bias);
    Matrix dy = dres2;

    // FFN: h2 = drop(relu(h1)) * w2 + b2
    Matrix activated = tr.h1;
    for (double& v : activated.data) v = v > 0.0 ? v : 0.0;
    apply_mask(activated, tr.relu_drop_mask);

    add_in_place(g.ffn_w2, matmul_tn(activated, dres2));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g.ffn_b2[j] += dres2(i, j);

    Matrix dact = matmul_nt(dres2, w.ffn_w2);  // (n x d) * (ffn x d)^T = n x ffn
    apply_mask(dact, tr.relu_drop_mask);
    for (std::size_t i = 0; i < dact.data.size(); ++i)
        if (tr.h1.data[i] <= 0.0) dact.data[i] = 0.0;

    add_in_place(g.ffn_w1, matmul_tn(tr.y, dact));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dact.cols; ++j) g.ffn_b1[j] += dact(i, j);
    add_in_place(dy, matmul_nt(dact, w.ffn_w1));

    // ln1 -> res1 = x + mh
    Matrix dres1 = layer_norm_backward(dy, tr.ln1, w.ln1_gain, g.ln1_gain, g.ln1_bias);
    Matrix dx = dres1;

    // mh = concat * w_o
    add_in_place(g.w_o, matmul_tn(tr.concat, dres1));
    Matrix dconcat = matmul_nt(dres1, w.w_o);

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        const auto& ht = tr.heads[h];
        Matrix dhead(n, dh);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < dh; ++j) dhead(i, j) = dconcat(i, h * dh + j);

        Matrix attn_used = ht.attn;
        apply_mask(attn_used, ht.attn_drop_mask);

        // head_out = attn_used * v
        Matrix dattn_used = matmul_nt(dhead, ht.v);
        Matrix dv = matmul_tn(attn_used, dhead);

        apply_mask(dattn_used, ht.attn_drop_mask);
        Matrix dlogits(n, n);
        softmax_row_backward(ht.attn, dattn_used, dlogits);
        scale_in_place(dlogits, scale);

        Matrix dq = matmul(dlogits, ht.k);
        Matrix dk = matmul_tn(dlogits, ht.q);

        add_in_place(g.w_q[h], matmul_tn(tr.x_in, dq));
        add_in_place(g.w_k[h], matmul_tn(tr.x_in, dk));
        add_in_place(g.w_v[h], matmul_tn(tr.x_in, dv));
        add_in_place(dx, matmul_nt(dq, w.w_q[h]));
        add_in_place(dx, matmul_nt(dk, w.w_k[h]));
        add_in_place(dx, matmul_nt(dv, w.w_v[h]));
    }
    return dx;
}

}  // namespace

void backward_template(const TemplateTrace& trace, const ModelWeights& w,
                       const Vector& d_r, ModelWeights& grads) {
    const Matrix& f = trace.f;
    const std::size_t n = f.rows;
    const std::size_t d = f.cols;
    const Matrix& rmh = trace.encoder.blocks.back().z;
    const Matrix& q = trace.agg.q;

    // r = sum_i f_i * q_i (per column in component-wise mode)
    Matrix dq(q.rows, q.cols);
    if (w.head.mode == ScoreMode::kElement) {
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += f(i, j) * d_r[j];
            dq(i, 0) = acc;
        }
    } else {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) dq(i, j) = f(i, j) * d_r[j];
    }

    Matrix ds(q.rows, q.cols);
    softmax_column_backward(q, dq, ds);

    // s = rmh * w_q
    add_in_place(grads.head.w, matmul_tn(rmh, ds));
    Matrix dx = matmul_nt(ds, w.head.w);

    for (std::size_t b = w.blocks.size(); b-- > 0;)
        dx = block_backward(dx, trace.encoder.blocks[b], w.blocks[b], grads.blocks[b],
                            w.cfg);
}

BatchGradients backward_batch(const MicroBatch& batch, const ModelWeights& w,
                              const Matrix& class_weights, const LossConfig& cfg,
                              EncodeMode mode, Rng* rng) {
    if (batch.templates.size() != batch.labels.size())
        throw std::invalid_argument("backward_batch: batch size mismatch");
    BatchGradients out;
    out.model = zeros_like(w);
    out.class_weights = Matrix(class_weights.rows, class_weights.cols);
    Vector d_r;
    for (std::size_t i = 0; i < batch.templates.size(); ++i) {
        TemplateTrace trace;
        AggregationResult agg =
            forward_template(batch.templates[i], w, mode, rng, &trace);
        out.loss += aam_loss(agg.r, class_weights, batch.labels[i], cfg, &d_r,
                             &out.class_weights);
        backward_template(trace, w, d_r, out.model);
    }
    return out;
}

double batch_loss(const MicroBatch& batch, const ModelWeights& w,
                  const Matrix& class_weights, const LossConfig& cfg,
                  EncodeMode mode, Rng* rng) {
    if (batch.templates.size() != batch.labels.size())
        throw std::invalid_argument("batch_loss: batch size mismatch");
    double loss = 0.0;
    for (std::size_t i = 0; i < batch.templates.size(); ++i) {
        AggregationResult agg = forward_template(batch.templates[i], w, mode, rng);
        loss += aam_loss(agg.r, class_weights, batch.labels[i], cfg);
    }
    return loss;
}

double RAdam::rectification(std::int64_t t, double beta2) {
    const double rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    const double beta2_t = std::pow(beta2, static_cast<double>(t));
    return rho_inf - 2.0 * static_cast<double>(t) * beta2_t / (1.0 - beta2_t);
}

void RAdam::step(const std::vector<ParamRef>& params,
                 const std::vector<ParamRef>& grads) {
    if (params.size() != grads.size())
        throw std::invalid_argument("RAdam::step: param/grad tensor count mismatch");
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].data->size(), 0.0);
            v_[i].assign(params[i].data->size(), 0.0);
        }
    }

    ++t_;
    const double t = static_cast<double>(t_);
    const double bias1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bias2 = 1.0 - std::pow(cfg_.beta2, t);
    const double rho_inf = 2.0 / (1.0 - cfg_.beta2) - 1.0;
    const double rho_t = rectification(t_, cfg_.beta2);
    const bool rectified = rho_t > 4.0;
    double rect_factor = 1.0;
    if (rectified)
        rect_factor = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                                ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));

    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& param = *params[p].data;
        const auto& grad = *grads[p].data;
        if (param.size() != grad.size() || param.size() != m_[p].size())
            throw std::invalid_argument("RAdam::step: tensor '" + params[p].name +
                                        "' size changed");
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < param.size(); ++i) {
            const double g = grad[i];
            if (!std::isfinite(g))
                throw std::runtime_error("RAdam::step: non-finite gradient in '" +
                                         params[p].name + "' at index " +
                                         std::to_string(i));
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double m_hat = m[i] / bias1;
            if (rectified) {
                const double v_hat = std::sqrt(v[i] / bias2);
                param[i] -= cfg_.lr * rect_factor * m_hat / (v_hat + cfg_.eps);
            } else {
                param[i] -= cfg_.lr * m_hat;
            }
        }
    }
}

void BatchSpec::validate() const {
    if (templates_per_batch == 0 || identities_per_batch == 0 || frames_per_template == 0)
        throw std::invalid_argument("BatchSpec: counts must be positive");
    if (templates_per_batch % identities_per_batch != 0)
        throw std::invalid_argument("BatchSpec: templates_per_batch (" +
                                    std::to_string(templates_per_batch) +
                                    ") must be divisible by identities_per_batch (" +
                                    std::to_string(identities_per_batch) + ")");
}

double ScheduledSampling::probability(std::size_t t) const {
    if (horizon == 0 || t >= horizon) return 0.0;
    if (t == 0) return 1.0;
    return 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(t) /
                                 static_cast<double>(horizon)));
}

double icpg(const std::vector<TemplateSample>& templates, const ModelWeights& w) {
    std::map<std::size_t, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < templates.size(); ++i)
        by_label[templates[i].label].push_back(i);

    std::vector<Vector> sa(templates.size()), ave(templates.size());
    for (std::size_t i = 0; i < templates.size(); ++i) {
        sa[i] = aggregate_track(templates[i].frames, w).r;
        ave[i] = average_pool(templates[i].frames);
    }

    double sum_sa = 0.0, sum_ave = 0.0;
    std::size_t pairs = 0;
    for (const auto& [label, idx] : by_label) {
        if (idx.size() < 2) {
            log_warn("icpg: identity " + std::to_string(label) +
                     " has fewer than 2 templates, skipping");
            continue;
        }
        for (std::size_t a = 0; a < idx.size(); ++a)
            for (std::size_t b = a + 1; b < idx.size(); ++b) {
                sum_sa += cosine_distance(sa[idx[a]], sa[idx[b]]);
                sum_ave += cosine_distance(ave[idx[a]], ave[idx[b]]);
                ++pairs;
            }
    }
    if (pairs == 0)
        throw std::invalid_argument("icpg: no identity has two or more templates");
    return (sum_ave - sum_sa) / static_cast<double>(pairs);
}

std::pair<Dataset, Dataset> split_by_identity(const Dataset& dataset,
                                              double val_fraction,
                                              std::uint64_t seed) {
    if (val_fraction < 0.0 || val_fraction >= 1.0)
        throw std::invalid_argument("split_by_identity: val_fraction must be in [0,1)");
    const std::size_t n = dataset.num_classes();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    rng.shuffle(order);

    std::size_t n_val = static_cast<std::size_t>(
        std::llround(val_fraction * static_cast<double>(n)));
    if (val_fraction > 0.0 && n_val == 0 && n > 1) n_val = 1;
    if (n_val >= n) n_val = n - 1;

    Dataset train, val;
    train.dim = val.dim = dataset.dim;
    for (std::size_t i = 0; i < n; ++i) {
        Dataset& dst = i < n_val ? val : train;
        const std::size_t cls = order[i];
        dst.identities.push_back(dataset.identities[cls]);
        dst.sessions.push_back(dataset.sessions[cls]);
    }
    return {std::move(train), std::move(val)};
}

namespace {

// Frame subset of one session, ascending order; samples with replacement
// only when the session is shorter than the request.
Matrix sample_template_frames(const Matrix& session, std::size_t count, Rng& rng) {
    std::vector<std::size_t> rows;
    if (session.rows >= count) {
        rows = rng.sample_without_replacement(session.rows, count);
    } else {
        rows.resize(count);
        for (auto& r : rows) r = rng.uniform_index(session.rows);
        std::sort(rows.begin(), rows.end());
    }
    Matrix out(rows.size(), session.cols);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < session.cols; ++j) out(i, j) = session(rows[i], j);
    return out;
}

Matrix init_class_weights(std::size_t num_classes, std::size_t dim, Rng& rng) {
    Matrix w(num_classes, dim);
    for (double& v : w.data) v = rng.normal();
    for (std::size_t i = 0; i < num_classes; ++i) {
        const double n = l2_norm(w.row(i));
        for (std::size_t j = 0; j < dim; ++j) w(i, j) /= n;
    }
    return w;
}

void renormalize_rows(Matrix& w) {
    for (std::size_t i = 0; i < w.rows; ++i) {
        const double n = l2_norm(w.row(i));
        if (n == 0.0) continue;
        for (std::size_t j = 0; j < w.cols; ++j) w(i, j) /= n;
    }
}

struct TrainerCore {
    const TrainConfig& cfg;
    ModelWeights weights;
    Matrix class_weights;
    RAdam optimizer;
    Rng rng;
    std::vector<TemplateSample> val_templates;

    ModelWeights best_weights;
    double best_icpg = -std::numeric_limits<double>::infinity();
    std::size_t evals_since_best = 0;
    TrainResult result;

    TrainerCore(const TrainConfig& config, std::size_t num_classes, const Dataset& val)
        : cfg(config), optimizer(config.optimizer), rng(config.seed) {
        EncoderConfig enc = cfg.encoder;
        enc.validate();
        weights = init_model(enc, cfg.score_mode, rng);
        class_weights = init_class_weights(num_classes, enc.embed_dim, rng);
        val_templates =
            make_validation_templates(val, cfg.batch.frames_per_template, rng);

        // ICPG needs at least one identity with two templates; without that
        // there is no early-stopping signal and training runs to the cap.
        std::map<std::size_t, std::size_t> counts;
        bool has_pair = false;
        for (const auto& t : val_templates)
            if (++counts[t.label] >= 2) has_pair = true;
        if (!val_templates.empty() && !has_pair) {
            log_warn(
                "validation split has no identity with two or more templates; "
                "ICPG early stopping disabled");
            val_templates.clear();
        }
        best_weights = weights;
    }

    LossConfig loss_config(std::size_t num_classes) const {
        LossConfig loss = cfg.loss;
        loss.num_classes = num_classes;
        return loss;
    }

    void apply(BatchGradients& grads, std::size_t num_templates) {
        const double inv = 1.0 / static_cast<double>(num_templates);
        auto model_grads = param_refs(grads.model);
        for (auto& ref : model_grads)
            for (double& g : *ref.data) g *= inv;
        scale_in_place(grads.class_weights, inv);

        auto params = param_refs(weights);
        params.push_back({"class_weights", &class_weights.data});
        model_grads.push_back({"class_weights", &grads.class_weights.data});
        optimizer.step(params, model_grads);
        renormalize_rows(class_weights);
    }

    // Returns false when patience is exhausted.
    bool evaluate(std::size_t iteration, double mean_loss, const TrainLogger& logger) {
        TrainLogEntry entry{iteration, mean_loss, std::nullopt};
        if (!val_templates.empty()) {
            entry.icpg = icpg(val_templates, weights);
            if (*entry.icpg > best_icpg) {
                best_icpg = *entry.icpg;
                best_weights = weights;
                evals_since_best = 0;
            } else {
                ++evals_since_best;
            }
        }
        result.history.push_back(entry);
        if (logger) logger(entry);
        return val_templates.empty() || evals_since_best < cfg.patience;
    }

    TrainResult finish(std::size_t iterations) {
        result.iterations_run = iterations;
        if (std::isfinite(best_icpg)) {
            result.weights = best_weights;
            result.best_icpg = best_icpg;
        } else {
            result.weights = weights;
            result.best_icpg = 0.0;
        }
        return std::move(result);
    }
};

}  // namespace

MicroBatch sample_identity_batch(const Dataset& train, const BatchSpec& spec,
                                 Rng& rng) {
    spec.validate();
    if (train.num_classes() < spec.identities_per_batch)
        throw std::invalid_argument(
            "sample_identity_batch: dataset has " + std::to_string(train.num_classes()) +
            " identities, batch needs " + std::to_string(spec.identities_per_batch));
    MicroBatch batch;
    const std::size_t per_identity = spec.templates_per_identity();
    const auto ids =
        rng.sample_without_replacement(train.num_classes(), spec.identities_per_batch);
    std::vector<std::size_t> shuffled(ids);
    rng.shuffle(shuffled);
    for (const std::size_t cls : shuffled) {
        const auto& sessions = train.sessions[cls];
        for (std::size_t t = 0; t < per_identity; ++t) {
            const Matrix& session = sessions[rng.uniform_index(sessions.size())];
            batch.templates.push_back(
                sample_template_frames(session, spec.frames_per_template, rng));
            batch.labels.push_back(cls);
        }
    }
    return batch;
}

std::vector<TemplateSample> make_validation_templates(const Dataset& val,
                                                      std::size_t frames_per_template,
                                                      Rng& rng) {
    std::vector<TemplateSample> out;
    for (std::size_t cls = 0; cls < val.num_classes(); ++cls)
        for (const Matrix& session : val.sessions[cls])
            out.push_back({cls, sample_template_frames(session, frames_per_template, rng)});
    return out;
}

TrainResult train_single(const Dataset& dataset, const TrainConfig& cfg,
                         const TrainLogger& logger) {
    auto [train, val] = split_by_identity(dataset, cfg.val_fraction, cfg.seed);
    return train_single(train, val, cfg, logger);
}

TrainResult train_single(const Dataset& train, const Dataset& val,
                         const TrainConfig& cfg, const TrainLogger& logger) {
    cfg.batch.validate();
    if (train.dim != cfg.encoder.embed_dim)
        throw std::invalid_argument("train_single: dataset dim " +
                                    std::to_string(train.dim) +
                                    " does not match encoder embed_dim " +
                                    std::to_string(cfg.encoder.embed_dim));
    if (train.num_classes() < cfg.batch.identities_per_batch)
        throw std::invalid_argument(
            "train_single: training split has " + std::to_string(train.num_classes()) +
            " identities, batch needs " + std::to_string(cfg.batch.identities_per_batch));

    TrainerCore core(cfg, train.num_classes(), val);
    const LossConfig loss = core.loss_config(train.num_classes());

    std::size_t iteration = 0;
    for (; iteration < cfg.max_iterations; ++iteration) {
        MicroBatch batch = sample_identity_batch(train, cfg.batch, core.rng);
        BatchGradients grads = backward_batch(batch, core.weights, core.class_weights,
                                              loss, EncodeMode::kTrain, &core.rng);
        const double mean_loss = grads.loss / static_cast<double>(batch.templates.size());
        core.apply(grads, batch.templates.size());

        if ((iteration + 1) % cfg.eval_every == 0 || iteration + 1 == cfg.max_iterations)
            if (!core.evaluate(iteration + 1, mean_loss, logger)) {
                ++iteration;
                break;
            }
    }
    return core.finish(iteration);
}

namespace {

std::vector<std::size_t> majority_labels(const TrackSet& tracks,
                                         const std::vector<std::size_t>& frame_labels) {
    std::vector<std::size_t> out;
    out.reserve(tracks.k());
    for (const auto& members : tracks.tracks) {
        std::map<std::size_t, std::size_t> votes;
        for (const std::size_t m : members) ++votes[frame_labels[m]];
        std::size_t best_label = 0, best_count = 0;
        for (const auto& [label, count] : votes)
            if (count > best_count) {
                best_count = count;
                best_label = label;
            }
        out.push_back(best_label);
    }
    return out;
}

}  // namespace

TrainResult train_multi(const Dataset& dataset, const TrainConfig& cfg,
                        const TrainLogger& logger) {
    auto [train, val] = split_by_identity(dataset, cfg.val_fraction, cfg.seed);
    return train_multi(train, val, cfg, logger);
}

TrainResult train_multi(const Dataset& train, const Dataset& val,
                        const TrainConfig& cfg, const TrainLogger& logger) {
    if (train.dim != cfg.encoder.embed_dim)
        throw std::invalid_argument("train_multi: dataset dim " +
                                    std::to_string(train.dim) +
                                    " does not match encoder embed_dim " +
                                    std::to_string(cfg.encoder.embed_dim));
    cfg.video.validate();
    if (train.num_classes() < cfg.video.max_identities)
        throw std::invalid_argument(
            "train_multi: training split has " + std::to_string(train.num_classes()) +
            " identities, videos need at least " +
            std::to_string(cfg.video.max_identities));
    if (cfg.videos_per_batch == 0)
        throw std::invalid_argument("train_multi: videos_per_batch must be positive");

    TrainerCore core(cfg, train.num_classes(), val);
    const LossConfig loss = core.loss_config(train.num_classes());

    std::size_t iteration = 0;
    for (; iteration < cfg.max_iterations; ++iteration) {
        const double p_truth = cfg.sampling.probability(iteration);

        MicroBatch batch;
        for (std::size_t v = 0; v < cfg.videos_per_batch; ++v) {
            MultiVideo video = gen_multi_video(train, cfg.video, core.rng);
            const bool use_truth = core.rng.uniform() < p_truth;
            IdentityMask mask = use_truth
                                    ? video.ground_truth_mask()
                                    : build_mask(video.frames, cfg.mask_threshold);
            Vector norms(video.frames.rows);
            for (std::size_t i = 0; i < video.frames.rows; ++i)
                norms[i] = l2_norm(video.frames.row(i));
            const TrackSet tracks = extract_tracks(greedy_postprocess(mask, norms));
            const auto labels = majority_labels(tracks, video.labels);
            for (std::size_t t = 0; t < tracks.k(); ++t) {
                const auto& members = tracks.tracks[t];
                Matrix sub(members.size(), video.frames.cols);
                for (std::size_t i = 0; i < members.size(); ++i)
                    for (std::size_t j = 0; j < video.frames.cols; ++j)
                        sub(i, j) = video.frames(members[i], j);
                batch.templates.push_back(std::move(sub));
                batch.labels.push_back(labels[t]);
            }
        }

        BatchGradients grads = backward_batch(batch, core.weights, core.class_weights,
                                              loss, EncodeMode::kTrain, &core.rng);
        const double mean_loss = grads.loss / static_cast<double>(batch.templates.size());
        core.apply(grads, batch.templates.size());

        if ((iteration + 1) % cfg.eval_every == 0 || iteration + 1 == cfg.max_iterations)
            if (!core.evaluate(iteration + 1, mean_loss, logger)) {
                ++iteration;
                break;
            }
    }
    return core.finish(iteration);
}

}  // namespace trackpool
