#pragma once
// Training loop: decoupled-weight-decay Adam with cosine learning-rate decay
// over the batch objective (mean surface+geo terms plus the batch-level
// contrastive term). Deterministic for a fixed seed in single-threaded mode.

#include <filesystem>
#include <span>
#include <vector>

#include "layoutforge/degen.hpp"
#include "layoutforge/gradcheck.hpp"
#include "layoutforge/losses.hpp"
#include "layoutforge/model.hpp"
#include "layoutforge/synth.hpp"

namespace lf {

struct OptimConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4; // skipped for biases and tau
    int epochs = 20;
    int batch_size = 4;
    bool cosine_decay = true;

    void validate() const; // throws std::invalid_argument
};

struct TrainOptions {
    ModelConfig model;
    OptimConfig optim;
    LossWeights loss_weights;
    EdgeLossConfig edge;
    AugmentConfig augment; // zero probabilities and jitter ranges disable stages
    SynthConfig render;    // re-render settings for degenerated samples
    double tau_init = 0.07;
    double clamp_eps = 1e-7;
    double dice_eps = 1e-6;
    uint64_t seed = 0;
    int threads = 1;
};

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double mean_loss = 0.0;
    double train_pe = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochStats> log;
};

struct BatchSampleRef {
    const RgbImage* image;
    const LayoutMask* mask;
};

struct BatchLoss {
    double value = 0.0;
    double pe_sum = 0.0;
    ModelParams grads;
};

// The text side of the contrastive pairing: present surface names in label
// order, space-joined.
std::string surface_text(const LayoutMask& mask);

BatchLoss batch_loss_and_grads(std::span<const BatchSampleRef> batch, const ModelParams& params,
                               const TrainOptions& opts);

// Throws std::runtime_error on a non-finite loss.
TrainResult train(const DatasetManifest& manifest, const RoomTaxonomy& taxonomy,
                  const TrainOptions& opts);

void write_train_log(const std::vector<EpochStats>& log, const std::filesystem::path& path);

// End-to-end FD check on a 16x16 two-sample batch; coordinates are sampled
// per parameter group so every group (tau included) is covered.
GradCheckEntry gradcheck_model(uint64_t seed, double h = 1e-5, double tol = 1e-3,
                               int coords_per_group = 12, bool inject_bug = false);

} // namespace lf
