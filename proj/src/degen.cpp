#include "layoutforge/degen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>

namespace lf {

void AugmentConfig::validate() const {
    if (hflip_prob < 0 || hflip_prob > 1 || degen_prob < 0 || degen_prob > 1)
        throw std::invalid_argument("augment: probabilities must lie in [0,1]");
    if (brightness < 0 || contrast < 0)
        throw std::invalid_argument("augment: brightness/contrast must be >= 0");
}

namespace {

double quantize(double v) { return std::round(v * 256.0) / 256.0; }

double out_lo(CounterRng& rng, double dim) { return quantize(-rng.uniform(0.05, 0.30) * dim); }
double out_hi(CounterRng& rng, double dim) { return quantize((1.0 + rng.uniform(0.05, 0.30)) * dim); }

} // namespace

PolyLayout degenerate(const PolyLayout& poly, const DagEdge& edge, const RoomTaxonomy& taxonomy,
                      CounterRng& rng) {
    if (edge.parent != poly.room_type)
        throw std::invalid_argument("degenerate: edge parent does not match layout type");
    if (edge.identity()) return poly;

    const RoomType* child = taxonomy.find(edge.child);
    if (!child) throw std::invalid_argument("degenerate: unknown child type");
    if (!poly.surface_set().contains(edge.removed))
        throw std::invalid_argument("degenerate: surface not present in layout");

    const double W = poly.width, H = poly.height;
    BackRect rect = poly.rect;
    switch (edge.removed) {
        case Surface::ceiling:
            rect.y0 = out_lo(rng, H);
            if (rect.collapsed) rect.y1 = rect.y0;
            break;
        case Surface::floor:
            if (rect.collapsed) rect.y0 = rect.y1 = out_hi(rng, H);
            else rect.y1 = out_hi(rng, H);
            break;
        case Surface::left_wall:
            rect.x0 = out_lo(rng, W);
            if (rect.collapsed) rect.x1 = rect.x0;
            break;
        case Surface::right_wall:
            if (rect.collapsed) rect.x0 = rect.x1 = out_hi(rng, W);
            else rect.x1 = out_hi(rng, W);
            break;
        case Surface::front_wall: {
            // Collapse to the rectangle centre, preserving out-of-frame axes
            // so already-removed surfaces stay removed.
            double ax = quantize(0.5 * (rect.x0 + rect.x1));
            double ay = quantize(0.5 * (rect.y0 + rect.y1));
            if (rect.x0 <= 0.0) ax = rect.x0;
            if (rect.x1 >= W) ax = rect.x1;
            if (rect.y0 <= 0.0) ay = rect.y0;
            if (rect.y1 >= H) ay = rect.y1;
            rect = {ax, ay, ax, ay, true};
            break;
        }
    }
    return build_poly_layout(poly.width, poly.height, edge.child, rect, taxonomy);
}

LayoutMask degenerate_mask(const LayoutMask& mask, const RetainMask& retain) {
    if (retain.retain.empty()) throw std::invalid_argument("degenerate_mask: empty retain set");

    const int h = mask.h, w = mask.w;
    const size_t n = mask.labels.size();
    constexpr int kInf = std::numeric_limits<int>::max();

    // One BFS distance field per retained label that actually appears, then a
    // per-pixel lexicographic argmin over (distance, label).
    std::vector<int> best_dist(n, kInf);
    std::vector<uint8_t> best_label(n, 0);
    std::vector<int> dist(n);
    bool any_source = false;

    for (Surface s : retain.retain.items()) {
        const uint8_t label = static_cast<uint8_t>(s);
        std::fill(dist.begin(), dist.end(), kInf);
        std::queue<size_t> q;
        for (size_t i = 0; i < n; ++i)
            if (mask.labels[i] == label) {
                dist[i] = 0;
                q.push(i);
            }
        if (q.empty()) continue;
        any_source = true;
        while (!q.empty()) {
            const size_t i = q.front();
            q.pop();
            const int r = static_cast<int>(i) / w, c = static_cast<int>(i) % w;
            constexpr int dr[4] = {-1, 1, 0, 0};
            constexpr int dc[4] = {0, 0, -1, 1};
            for (int k = 0; k < 4; ++k) {
                const int nr = r + dr[k], nc = c + dc[k];
                if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
                const size_t ni = static_cast<size_t>(nr) * w + nc;
                if (dist[ni] != kInf) continue;
                dist[ni] = dist[i] + 1;
                q.push(ni);
            }
        }
        for (size_t i = 0; i < n; ++i)
            if (dist[i] < best_dist[i]) {
                best_dist[i] = dist[i];
                best_label[i] = label;
            }
    }
    if (!any_source) throw std::invalid_argument("degenerate_mask: no retained surface present");

    LayoutMask out = mask;
    for (size_t i = 0; i < n; ++i) {
        const uint8_t l = mask.labels[i];
        if (l == 0) continue;
        if (!retain.retain.contains(static_cast<Surface>(l))) out.labels[i] = best_label[i];
    }
    return out;
}

LayoutMask hflip_mask(const LayoutMask& mask) {
    LayoutMask out(mask.h, mask.w);
    for (int r = 0; r < mask.h; ++r)
        for (int c = 0; c < mask.w; ++c) {
            uint8_t l = mask.at(r, mask.w - 1 - c);
            if (l == static_cast<uint8_t>(Surface::left_wall)) l = static_cast<uint8_t>(Surface::right_wall);
            else if (l == static_cast<uint8_t>(Surface::right_wall)) l = static_cast<uint8_t>(Surface::left_wall);
            out.at(r, c) = l;
        }
    return out;
}

RgbImage hflip_image(const RgbImage& image) {
    RgbImage out(image.h, image.w);
    for (int ch = 0; ch < 3; ++ch)
        for (int r = 0; r < image.h; ++r)
            for (int c = 0; c < image.w; ++c) out.at(ch, r, c) = image.at(ch, r, image.w - 1 - c);
    return out;
}

std::pair<RgbImage, PolyLayout> hflip(const RgbImage& image, const PolyLayout& poly,
                                      const RoomTaxonomy& taxonomy) {
    if (image.w != poly.width || image.h != poly.height)
        throw std::invalid_argument("hflip: image and layout dimensions disagree");

    const RoomType* mirrored = taxonomy.find_by_set(poly.surface_set().mirrored());
    if (!mirrored) throw std::invalid_argument("hflip: mirrored surface set absent from taxonomy");

    const double W = poly.width;
    BackRect rect = poly.rect;
    if (rect.collapsed) {
        rect.x0 = rect.x1 = W - poly.rect.x0;
    } else {
        rect.x0 = W - poly.rect.x1;
        rect.x1 = W - poly.rect.x0;
    }
    return {hflip_image(image),
            build_poly_layout(poly.width, poly.height, mirrored->id, rect, taxonomy)};
}

RgbImage jitter_apply(const RgbImage& image, double brightness_shift, double contrast_gain) {
    // exact identity at zero parameters, no round-trip through (v-0.5)+0.5
    if (brightness_shift == 0.0 && contrast_gain == 1.0) return image;
    RgbImage out(image.h, image.w);
    for (size_t i = 0; i < image.v.size(); ++i)
        out.v[i] = std::clamp((image.v[i] - 0.5) * contrast_gain + 0.5 + brightness_shift, 0.0, 1.0);
    return out;
}

RgbImage photometric_jitter(const RgbImage& image, const AugmentConfig& cfg, CounterRng& rng) {
    const double c = rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast);
    const double b = rng.uniform(-cfg.brightness, cfg.brightness);
    return jitter_apply(image, b, c);
}

Sample augment_sample(const Sample& sample, const DegenerationDAG& dag,
                      const RoomTaxonomy& taxonomy, const AugmentConfig& cfg,
                      const SynthConfig& render_cfg, CounterRng& rng) {
    cfg.validate();
    Sample out = sample;

    const bool do_degen = rng.uniform() < cfg.degen_prob;
    if (do_degen) {
        const auto edges = dag.edges_from(out.poly.room_type);
        if (!edges.empty()) {
            const DagEdge& edge = edges[rng.below(edges.size())];
            out.poly = degenerate(out.poly, edge, taxonomy, rng);
            out.mask = rasterize(out.poly);
            out.image = render_image(out.poly, render_cfg, rng);
        }
    }

    if (rng.uniform() < cfg.hflip_prob) {
        auto [img, poly] = hflip(out.image, out.poly, taxonomy);
        out.image = std::move(img);
        out.poly = std::move(poly);
        out.mask = hflip_mask(out.mask);
    }

    out.image = photometric_jitter(out.image, cfg, rng);
    return out;
}

} // namespace lf
