#pragma once
// Topology-preserving degeneration plus photometric and flip augmentation.
// Geometric ops work on the vector layout and re-rasterize; the literal
// retain-mask form is provided for datasets without vector annotations.

#include "layoutforge/core.hpp"
#include "layoutforge/rng.hpp"
#include "layoutforge/synth.hpp"

namespace lf {

struct RetainMask {
    SurfaceSet retain;
};

struct AugmentConfig {
    double brightness = 0.2;
    double contrast = 0.1;
    double hflip_prob = 0.5;
    double degen_prob = 0.5;
    uint64_t seed = 0;

    void validate() const; // throws std::invalid_argument
};

struct Sample {
    RgbImage image;
    LayoutMask mask;
    PolyLayout poly;
};

// Removes edge.removed by translating its bounding coordinate outside the
// frame (or collapsing the back rectangle for the front wall); neighbours
// expand to re-cover the frame. Identity edges (parent == child) copy.
PolyLayout degenerate(const PolyLayout& poly, const DagEdge& edge, const RoomTaxonomy& taxonomy,
                      CounterRng& rng);

// Reassigns pixels of non-retained surfaces to the geodesically (4-connected)
// nearest retained label; distance ties take the lower label. Background
// pixels are untouched.
LayoutMask degenerate_mask(const LayoutMask& mask, const RetainMask& retain);

// Mirror about the vertical axis; left/right wall labels swap.
LayoutMask hflip_mask(const LayoutMask& mask);
RgbImage hflip_image(const RgbImage& image);
std::pair<RgbImage, PolyLayout> hflip(const RgbImage& image, const PolyLayout& poly,
                                      const RoomTaxonomy& taxonomy);

// out = clamp((in - 0.5)*c + 0.5 + b) with c ~ U[1-contrast, 1+contrast],
// b ~ U[-brightness, +brightness]; draw order is c then b.
RgbImage photometric_jitter(const RgbImage& image, const AugmentConfig& cfg, CounterRng& rng);
RgbImage jitter_apply(const RgbImage& image, double brightness_shift, double contrast_gain);

// Degeneration (prob, uniform over applicable DAG edges, image re-rendered
// from render_cfg), then horizontal flip (prob), then jitter.
Sample augment_sample(const Sample& sample, const DegenerationDAG& dag,
                      const RoomTaxonomy& taxonomy, const AugmentConfig& cfg,
                      const SynthConfig& render_cfg, CounterRng& rng);

} // namespace lf
