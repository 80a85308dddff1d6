#pragma once
// Desk-scale task-conditioned query segmenter. A text task token initializes
// the object queries, a small strided-conv encoder supplies a two-level
// feature pyramid, single-head cross-attention layers refine the queries, and
// per-query mask logits come from dotting query embeddings against projected
// quarter-scale features. Backpropagation is hand-derived; forward caches
// hold everything the backward pass needs.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "layoutforge/core.hpp"
#include "layoutforge/rng.hpp"

namespace lf {

struct ModelConfig {
    int channels = 32;      // encoder feature width
    int embed_dim = 16;     // query embedding dim d
    int num_queries = 6;    // N (last query is the task token)
    int decoder_layers = 2; // cross-attention rounds, coarse-to-fine
    int vocab_size = 64;    // hash-embedding table rows
    double bg_prior = 0.1;  // map value for classes with no assigned query
    double class_bias_init = 3.0;
    std::string task_text = "the task is semantic";

    void validate() const; // throws std::invalid_argument
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);
    size_t size() const { return v.size(); }
    std::span<double> span() { return v; }
    std::span<const double> span() const { return v; }
};

struct NamedTensor {
    std::string name;
    Tensor* tensor;
};

struct DecoderLayer {
    Tensor wq, wk, wv, wo; // d x d, C x d, C x d, d x d
};

struct ModelParams {
    ModelConfig config;
    Tensor token_table;   // vocab x d
    Tensor query_offsets; // (N-1) x d, added to the repeated task token
    Tensor conv1_w, conv1_b;
    Tensor conv2_w, conv2_b;
    Tensor conv3_w, conv3_b;
    std::vector<DecoderLayer> layers;
    Tensor mask_proj_w, mask_proj_b; // d x C, d
    Tensor class_w;                  // d x (K+1)
    Tensor class_bias;               // N x (K+1); identity prior pins query n to class n
    Tensor tau;                      // learnable temperature, scalar

    static ModelParams init(const ModelConfig& cfg, uint64_t seed, double tau_init = 0.07);
    ModelParams zeros_like() const;
    std::vector<NamedTensor> named(); // stable order; drives optimizer/checkpoint/gradcheck
    size_t param_count() const;
};

// FNV-1a 64-bit; table row = hash % vocab_size
uint64_t token_hash(std::string_view token);

struct TaskToken {
    std::string text;
    std::vector<int> rows;         // one table row per whitespace token
    std::vector<double> embedding; // mean of the rows
};

TaskToken embed_task(const std::string& text, const Tensor& table);
void embed_task_backward(const TaskToken& task, std::span<const double> d_embedding,
                         Tensor& d_table);

// rows 0..N-2: task + per-row learned offset; row N-1: the task token itself
Matrix init_queries(const TaskToken& task, int num_queries, const Tensor& offsets);

struct FeaturePyramid {
    GridStack f4; // C x H/4 x W/4
    GridStack f8; // C x H/8 x W/8
};

struct AttnCache {
    Matrix q_in; // queries entering the layer
    Matrix qp, k, v, a, ctx;
    bool coarse = false; // attended to f8 rather than f4
};

struct MaskPrediction {
    std::vector<int> assignment;          // query -> class, argmax of class logits
    std::vector<Grid> class_maps;         // K+1 maps in [0,1]
    std::vector<std::vector<int>> winner; // per class, per pixel winning query (-1 none)
    GridStack probs;                      // per-pixel distribution over classes
};

// Queries attach to classes by class-logit argmax (ties to the lower id);
// a class map is the sigmoid of the max over its queries' logit planes, or a
// constant prior when no query lands on it; the final stack is the per-pixel
// softmax over class maps.
MaskPrediction predict_masks(const Matrix& class_logits, const GridStack& mask_logits,
                             double bg_prior);

struct ForwardCache {
    int img_h = 0, img_w = 0;
    GridStack input;        // 3 x H x W copy of the image
    GridStack y1, y2, y3;   // post-tanh conv outputs; y2 = f4, y3 = f8
    TaskToken task;
    Matrix q0;              // initial queries
    std::vector<AttnCache> attn;
    Matrix embeddings;      // final query embeddings N x d
    Matrix proj;            // d x (h4*w4) projected quarter-scale features
    Matrix mask_logits_low; // N x (h4*w4)
    GridStack mask_logits;  // N x H x W, bilinearly upsampled
    Matrix class_logits;    // N x (K+1)
    MaskPrediction pred;
};

// image dims must be divisible by 8
FeaturePyramid encode(const RgbImage& image, const ModelParams& params);

// Full forward pass; the cache backs both prediction and backward.
ForwardCache forward(const RgbImage& image, const ModelParams& params);

// argmax over classes, ties to the lower class id
LayoutMask assign_labels(const GridStack& probs);

LayoutMask infer(const RgbImage& image, const ModelParams& params);

// Accumulates parameter gradients given the loss gradients w.r.t. the
// probability stack, the per-surface-class maps (labels 1..5), and an extra
// per-query embedding gradient (contrastive pooling), all for one sample.
void backward(const ForwardCache& cache, const ModelParams& params, const GridStack& d_probs,
              std::span<const Grid> d_class_maps, const Matrix& d_embeddings, ModelParams& grads);

// Versioned binary container: magic, config echo, named f64 blobs (LE).
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

} // namespace lf
