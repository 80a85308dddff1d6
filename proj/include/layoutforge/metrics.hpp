#pragma once
// Evaluation: pixel accuracy/error, corner extraction from label masks, and
// corner error under exact minimum-cost bipartite matching. Corner error is
// normalized by the image diagonal; unmatched corners on either side are
// charged one full diagonal.

#include <functional>
#include <string>
#include <vector>

#include "layoutforge/core.hpp"
#include "layoutforge/synth.hpp"

namespace lf {

struct CornerSet {
    std::vector<Vec2> pts;
};

// percent of pixels whose labels differ
double pixel_error(const LayoutMask& pred, const LayoutMask& gt);

// Interior junctions: 2x2 windows holding >= 3 distinct labels. Boundary
// junctions: frame-edge positions where adjacent border pixels differ. Marks
// live on the (H+1)x(W+1) junction lattice and cluster by 8-connectivity;
// cluster centroids are the corners.
CornerSet extract_corners(const LayoutMask& mask);

double corner_error(const CornerSet& pred, const CornerSet& gt, int width, int height);

// Exact solver on a square cost matrix; match[row] = column. Exposed for the
// brute-force equivalence tests.
double min_cost_assignment(const Matrix& cost, std::vector<int>& match);

struct SampleEval {
    int64_t id = 0;
    double pe = 0.0;
    double e_cor = 0.0;
    bool ok = false;
    std::string error;
};

struct EvalReport {
    double pa = 0.0;
    double pe = 0.0;
    double e_cor = 0.0;
    int evaluated = 0;
    int failed = 0;
    std::vector<SampleEval> samples;

    std::string to_json() const;
    std::string summary_table() const;
};

struct EvalSampleInput {
    const ManifestEntry& entry;
    const RgbImage& image;
    const LayoutMask& gt_mask;
};
using InferFn = std::function<LayoutMask(const EvalSampleInput&)>;

// Reference corners: the vector layout by default; extracted_gt runs the same
// extraction on the ground-truth mask instead, so scoring a mask against
// itself is exactly zero (self-eval mode).
enum class CornerReference { poly, extracted_gt };

// Runs `infer` per sample. Per-sample failures are recorded and excluded from
// the aggregates.
EvalReport evaluate(const DatasetManifest& manifest, const InferFn& infer,
                    const RoomTaxonomy& taxonomy, int threads = 1,
                    CornerReference corner_ref = CornerReference::poly);

} // namespace lf
