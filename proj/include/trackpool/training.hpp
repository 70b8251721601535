#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "trackpool/aggregator.hpp"
#include "trackpool/data_io.hpp"
#include "trackpool/encoder.hpp"
#include "trackpool/model.hpp"
#include "trackpool/rng.hpp"

namespace trackpool {

enum class MarginType { kAdditiveCosine, kAdditiveAngular };

/// Margin-softmax loss over cosine logits scaled by the hypersphere radius.
/// The default is the additive cosine margin s*(cos t - m); the angular
/// variant s*cos(t + m) sits behind margin_type.
struct LossConfig {
    double scale = 16.0;
    double margin = 0.35;
    std::size_t num_classes = 0;
    MarginType margin_type = MarginType::kAdditiveCosine;

    void validate() const;
};

// Loss value for template r against L2-normalized class weight rows. When
// d_r / d_class_weights are non-null the exact gradients are written
// (d_class_weights accumulates, so it can be shared across a batch).
double aam_loss(const Vector& r, const Matrix& class_weights, std::size_t label,
                const LossConfig& cfg, Vector* d_r = nullptr,
                Matrix* d_class_weights = nullptr);

/// Everything recorded during one template's forward pass that the backward
/// pass needs.
struct TemplateTrace {
    Matrix f;  // original features
    EncoderTrace encoder;
    AggregationResult agg;
};

AggregationResult forward_template(const Matrix& f, const ModelWeights& w,
                                   EncodeMode mode, Rng* rng,
                                   TemplateTrace* trace = nullptr);

// Reverse-mode pass: propagates d_loss/d_r through the aggregation head and
// the encoder stack, accumulating into grads (a zeros_like(w) accumulator).
void backward_template(const TemplateTrace& trace, const ModelWeights& w,
                       const Vector& d_r, ModelWeights& grads);

struct MicroBatch {
    std::vector<Matrix> templates;
    std::vector<std::size_t> labels;
};

struct BatchGradients {
    double loss = 0.0;  // sum over templates
    ModelWeights model;
    Matrix class_weights;
};

// Loss and exact gradients summed over the batch.
BatchGradients backward_batch(const MicroBatch& batch, const ModelWeights& w,
                              const Matrix& class_weights, const LossConfig& cfg,
                              EncodeMode mode = EncodeMode::kInfer,
                              Rng* rng = nullptr);

// Forward-only companion of backward_batch (used by gradient checks).
double batch_loss(const MicroBatch& batch, const ModelWeights& w,
                  const Matrix& class_weights, const LossConfig& cfg,
                  EncodeMode mode = EncodeMode::kInfer, Rng* rng = nullptr);

struct RAdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Rectified Adam. Falls back to the un-adapted momentum update while the
/// variance-rectification term rho_t <= 4.
class RAdam {
  public:
    explicit RAdam(RAdamConfig cfg = {}) : cfg_(cfg) {}

    // params[i] and grads[i] must alias the same tensor across calls. A
    // non-finite gradient aborts with a diagnostic naming the tensor.
    void step(const std::vector<ParamRef>& params,
              const std::vector<ParamRef>& grads);

    std::int64_t step_count() const { return t_; }
    static double rectification(std::int64_t t, double beta2);

  private:
    RAdamConfig cfg_;
    std::int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct BatchSpec {
    std::size_t templates_per_batch = 256;
    std::size_t identities_per_batch = 128;
    std::size_t frames_per_template = 32;

    void validate() const;
    std::size_t templates_per_identity() const {
        return templates_per_batch / identities_per_batch;
    }
};

/// Cosine decay of the ground-truth-mask probability, 1 at step 0 and 0 at
/// and beyond the horizon.
struct ScheduledSampling {
    std::size_t horizon = 5000;

    double probability(std::size_t t) const;
};

struct TemplateSample {
    std::size_t label;
    Matrix frames;
};

// Identity-balanced batch: identities_per_batch identities sampled without
// replacement, templates_per_identity() templates each, frames_per_template
// ordered frames per template.
MicroBatch sample_identity_batch(const Dataset& train, const BatchSpec& spec,
                                 Rng& rng);

// Intra-class proximity gain: mean pairwise intra-class cosine distance of
// average-pooled templates minus the same under self-attention pooling.
// Identities with fewer than two templates are skipped with a warning.
double icpg(const std::vector<TemplateSample>& templates, const ModelWeights& w);

struct TrainConfig {
    EncoderConfig encoder;
    ScoreMode score_mode = ScoreMode::kElement;
    LossConfig loss;  // num_classes is filled from the dataset
    BatchSpec batch;
    RAdamConfig optimizer;
    std::size_t max_iterations = 2000;
    std::size_t eval_every = 200;
    std::size_t patience = 5;
    double val_fraction = 0.2;
    std::uint64_t seed = 0;

    // Multi-identity path only.
    ScheduledSampling sampling;
    double mask_threshold = 0.7;
    MultiVideoSpec video;
    std::size_t videos_per_batch = 4;
};

struct TrainLogEntry {
    std::size_t iteration = 0;
    double loss = 0.0;
    std::optional<double> icpg;
};

using TrainLogger = std::function<void(const TrainLogEntry&)>;

struct TrainResult {
    ModelWeights weights;  // best-ICPG snapshot
    double best_icpg = 0.0;
    std::size_t iterations_run = 0;
    std::vector<TrainLogEntry> history;
};

// Identity-balanced single-identity training with ICPG early stopping.
// Deterministic given cfg.seed. The one-dataset form carves the validation
// identities out via cfg.val_fraction.
TrainResult train_single(const Dataset& dataset, const TrainConfig& cfg,
                         const TrainLogger& logger = nullptr);
TrainResult train_single(const Dataset& train, const Dataset& val,
                         const TrainConfig& cfg, const TrainLogger& logger = nullptr);

// Multi-identity training: synthetic videos, scheduled sampling between
// ground-truth and predicted masks, per-track loss against the track's
// majority identity.
TrainResult train_multi(const Dataset& dataset, const TrainConfig& cfg,
                        const TrainLogger& logger = nullptr);
TrainResult train_multi(const Dataset& train, const Dataset& val,
                        const TrainConfig& cfg, const TrainLogger& logger = nullptr);

// Deterministic identity-based split helper (val gets round(fraction * n)
// identities, at least 1 when fraction > 0 and n > 1).
std::pair<Dataset, Dataset> split_by_identity(const Dataset& dataset,
                                              double val_fraction,
                                              std::uint64_t seed);

// Fixed validation templates for ICPG: one per session, subsampled to
// frames_per_template frames.
std::vector<TemplateSample> make_validation_templates(const Dataset& val,
                                                      std::size_t frames_per_template,
                                                      Rng& rng);

}  // namespace trackpool
