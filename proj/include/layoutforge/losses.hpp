#pragma once
// Loss kernels as pure value-and-gradient functions. Pixel losses are
// mean-reduced so the weights are resolution-independent. All gradients are
// analytic; the finite-difference harness in gradcheck.hpp verifies them.

#include <span>
#include <vector>

#include "layoutforge/core.hpp"

namespace lf {

struct LossWeights {
    double l1 = 2.0; // cross-entropy
    double l2 = 5.0; // dice
    double l3 = 5.0; // binary mask
    double l4 = 1.0; // edge
    double l5 = 1.0; // smoothness

    void validate() const; // throws std::invalid_argument on negatives
};

struct EdgeLossConfig {
    double sigma = 1.0;    // edge tolerance of the exponential response
    int gt_dilation = 1;   // rounds of 4-neighbourhood dilation on the target
    double clamp_eps = 1e-7;

    void validate() const;
};

struct ContrastiveConfig {
    double tau = 0.07; // temperature; trained alongside the model

    void validate() const;
};

struct GridLoss {
    double value = 0.0;
    Grid grad;
};

struct StackLoss {
    double value = 0.0;
    GridStack grad;
};

struct SurfaceLoss {
    double value = 0.0;
    double ce = 0.0, dice_mean = 0.0, bce_mean = 0.0;
    GridStack d_probs;
    std::vector<Grid> d_masks; // one per surface class, labels 1..5
};

struct ContrastiveLoss {
    double value = 0.0;
    Matrix d_obj, d_txt;
    double d_tau = 0.0;
};

struct TotalLoss {
    double value = 0.0;
    GridStack d_probs;
    std::vector<Grid> d_masks;
    Matrix d_obj, d_txt;
    double d_tau = 0.0;
};

// -(1/HW) sum log p[label]; probabilities are clamped to >= clamp_eps before
// the log (zero gradient where the clamp binds).
StackLoss ce_loss(const GridStack& probs, const LayoutMask& labels, double clamp_eps = 1e-7);

// 1 - 2*sum(p*g) / (sum p^2 + sum g^2 + eps)
GridLoss dice_loss(const Grid& pred, const Grid& gt, double eps = 1e-6);

// mean binary cross-entropy of pred against a {0,1} target grid
GridLoss bce_mask_loss(const Grid& pred, const Grid& gt, double clamp_eps = 1e-7);

// l1*ce + l2*mean_k dice + l3*mean_k bce over the five surface classes
// (background joins only the cross-entropy term).
SurfaceLoss surface_loss(const GridStack& probs, std::span<const Grid> class_masks,
                         const LayoutMask& gt, const LossWeights& weights,
                         double clamp_eps = 1e-7, double dice_eps = 1e-6);

// 1 where any 4-neighbour label differs, then dilated
Grid gt_edge_map(const LayoutMask& mask, const EdgeLossConfig& cfg);

// BCE(E_gt, 1 - exp(-g/sigma)) with g the class-mean central-difference
// gradient magnitude of the prediction stack (replicate padding).
StackLoss edge_loss(const GridStack& probs, const Grid& edge_gt, const EdgeLossConfig& cfg);

// ||pred - gt||_2 / sqrt(#elements); gradient guarded at zero distance
StackLoss smoothness_loss(const GridStack& pred, const GridStack& gt);

// l4*edge + l5*smooth
StackLoss geo_loss(const StackLoss& edge, const StackLoss& smooth, const LossWeights& weights);

// Bidirectional InfoNCE over dot-product similarities scaled by 1/tau, with
// gradients for both matrices and tau. Rows pair up by index.
ContrastiveLoss contrastive_loss(const Matrix& q_obj, const Matrix& q_txt,
                                 const ContrastiveConfig& cfg);

// Unweighted sum; prediction-stack gradients accumulate.
TotalLoss total_loss(const SurfaceLoss& surface, const ContrastiveLoss& contrastive,
                     const StackLoss& geo);

// gt helpers
GridStack one_hot_stack(const LayoutMask& mask, int num_classes = kNumClasses);
Grid class_binary(const LayoutMask& mask, int label);

} // namespace lf
