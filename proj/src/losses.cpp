#include "layoutforge/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "layoutforge/kernels.hpp"

namespace lf {

void LossWeights::validate() const {
    if (l1 < 0 || l2 < 0 || l3 < 0 || l4 < 0 || l5 < 0)
        throw std::invalid_argument("loss weights must be >= 0");
}

void EdgeLossConfig::validate() const {
    if (sigma <= 0) throw std::invalid_argument("edge loss: sigma must be > 0");
    if (gt_dilation < 0) throw std::invalid_argument("edge loss: gt_dilation must be >= 0");
    if (clamp_eps <= 0 || clamp_eps > 1e-3)
        throw std::invalid_argument("edge loss: clamp_eps out of (0, 1e-3]");
}

void ContrastiveConfig::validate() const {
    if (tau <= 0) throw std::invalid_argument("contrastive: tau must be > 0");
}

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void require_same_shape(const Grid& a, const Grid& b, const char* who) {
    if (a.w != b.w || a.h != b.h) throw std::invalid_argument(std::string(who) + ": shape mismatch");
}

} // namespace

GridStack one_hot_stack(const LayoutMask& mask, int num_classes) {
    GridStack stack(num_classes, mask.h, mask.w, 0.0);
    for (int r = 0; r < mask.h; ++r)
        for (int c = 0; c < mask.w; ++c) stack.at(mask.at(r, c), r, c) = 1.0;
    return stack;
}

Grid class_binary(const LayoutMask& mask, int label) {
    Grid g(mask.h, mask.w, 0.0);
    for (size_t i = 0; i < mask.labels.size(); ++i)
        if (mask.labels[i] == label) g.v[i] = 1.0;
    return g;
}

StackLoss ce_loss(const GridStack& probs, const LayoutMask& labels, double clamp_eps) {
    require(probs.h == labels.h && probs.w == labels.w, "ce_loss: shape mismatch");
    require(probs.c > 0, "ce_loss: empty stack");
    const double inv_n = 1.0 / (static_cast<double>(probs.h) * probs.w);

    StackLoss out;
    out.grad = GridStack(probs.c, probs.h, probs.w, 0.0);
    double acc = 0.0;
    for (int r = 0; r < probs.h; ++r)
        for (int c = 0; c < probs.w; ++c) {
            const int y = labels.at(r, c);
            require(y < probs.c, "ce_loss: label out of range of stack");
            const double p = probs.at(y, r, c);
            if (p < clamp_eps) {
                acc -= std::log(clamp_eps); // clamped: flat in p
            } else {
                acc -= std::log(p);
                out.grad.at(y, r, c) = -inv_n / p;
            }
        }
    out.value = acc * inv_n;
    return out;
}

GridLoss dice_loss(const Grid& pred, const Grid& gt, double eps) {
    require_same_shape(pred, gt, "dice_loss");
    require(eps > 0, "dice_loss: eps must be > 0");
    const double inter = kernels::dot(pred.span(), gt.span());
    const double denom = kernels::sumsq(pred.span()) + kernels::sumsq(gt.span()) + eps;

    GridLoss out;
    out.value = 1.0 - 2.0 * inter / denom;
    out.grad = Grid(pred.h, pred.w, 0.0);
    // d/dp_i = -2 g_i/denom + 4 p_i inter/denom^2
    kernels::axpy(-2.0 / denom, gt.span(), out.grad.span());
    kernels::axpy(4.0 * inter / (denom * denom), pred.span(), out.grad.span());
    return out;
}

GridLoss bce_mask_loss(const Grid& pred, const Grid& gt, double clamp_eps) {
    require_same_shape(pred, gt, "bce_mask_loss");
    const double inv_n = 1.0 / static_cast<double>(pred.size());

    GridLoss out;
    out.grad = Grid(pred.h, pred.w, 0.0);
    double acc = 0.0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const double p = std::clamp(pred.v[i], clamp_eps, 1.0 - clamp_eps);
        const double g = gt.v[i];
        acc -= g * std::log(p) + (1.0 - g) * std::log(1.0 - p);
        if (pred.v[i] > clamp_eps && pred.v[i] < 1.0 - clamp_eps)
            out.grad.v[i] = inv_n * (-g / p + (1.0 - g) / (1.0 - p));
    }
    out.value = acc * inv_n;
    return out;
}

SurfaceLoss surface_loss(const GridStack& probs, std::span<const Grid> class_masks,
                         const LayoutMask& gt, const LossWeights& weights, double clamp_eps,
                         double dice_eps) {
    weights.validate();
    require(class_masks.size() == kNumSurfaces, "surface_loss: expected one mask per surface");

    SurfaceLoss out;
    StackLoss ce = ce_loss(probs, gt, clamp_eps);
    out.ce = ce.value;
    out.d_probs = std::move(ce.grad);
    kernels::scale(std::span<double>(out.d_probs.v), weights.l1);

    const double inv_k = 1.0 / kNumSurfaces;
    out.d_masks.resize(kNumSurfaces);
    for (int k = 0; k < kNumSurfaces; ++k) {
        const Grid gt_k = class_binary(gt, k + 1);
        GridLoss dice = dice_loss(class_masks[k], gt_k, dice_eps);
        GridLoss bce = bce_mask_loss(class_masks[k], gt_k, clamp_eps);
        out.dice_mean += dice.value * inv_k;
        out.bce_mean += bce.value * inv_k;
        out.d_masks[k] = Grid(gt.h, gt.w, 0.0);
        kernels::axpy(weights.l2 * inv_k, dice.grad.span(), out.d_masks[k].span());
        kernels::axpy(weights.l3 * inv_k, bce.grad.span(), out.d_masks[k].span());
    }
    out.value = weights.l1 * out.ce + weights.l2 * out.dice_mean + weights.l3 * out.bce_mean;
    return out;
}

Grid gt_edge_map(const LayoutMask& mask, const EdgeLossConfig& cfg) {
    cfg.validate();
    Grid edge(mask.h, mask.w, 0.0);
    for (int r = 0; r < mask.h; ++r)
        for (int c = 0; c < mask.w; ++c) {
            const uint8_t l = mask.at(r, c);
            const bool diff = (r > 0 && mask.at(r - 1, c) != l) ||
                              (r + 1 < mask.h && mask.at(r + 1, c) != l) ||
                              (c > 0 && mask.at(r, c - 1) != l) ||
                              (c + 1 < mask.w && mask.at(r, c + 1) != l);
            if (diff) edge.at(r, c) = 1.0;
        }
    for (int round = 0; round < cfg.gt_dilation; ++round) {
        Grid next = edge;
        for (int r = 0; r < mask.h; ++r)
            for (int c = 0; c < mask.w; ++c) {
                if (edge.at(r, c) == 1.0) continue;
                const bool hit = (r > 0 && edge.at(r - 1, c) == 1.0) ||
                                 (r + 1 < mask.h && edge.at(r + 1, c) == 1.0) ||
                                 (c > 0 && edge.at(r, c - 1) == 1.0) ||
                                 (c + 1 < mask.w && edge.at(r, c + 1) == 1.0);
                if (hit) next.at(r, c) = 1.0;
            }
        edge = std::move(next);
    }
    return edge;
}

StackLoss edge_loss(const GridStack& probs, const Grid& edge_gt, const EdgeLossConfig& cfg) {
    cfg.validate();
    require(probs.h == edge_gt.h && probs.w == edge_gt.w, "edge_loss: shape mismatch");
    const int C = probs.c, H = probs.h, W = probs.w;
    const double inv_n = 1.0 / (static_cast<double>(H) * W);
    const double inv_c = 1.0 / C;
    const double eps = cfg.clamp_eps;

    // forward: per-class central differences (replicate padding), class-mean
    // magnitude, exponential edge response, then pixel BCE
    GridStack gx(C, H, W), gy(C, H, W), mag(C, H, W);
    Grid g(H, W, 0.0), epred(H, W, 0.0);
    for (int k = 0; k < C; ++k)
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                const int cl = std::max(c - 1, 0), cr = std::min(c + 1, W - 1);
                const int ru = std::max(r - 1, 0), rd = std::min(r + 1, H - 1);
                const double dx = 0.5 * (probs.at(k, r, cr) - probs.at(k, r, cl));
                const double dy = 0.5 * (probs.at(k, rd, c) - probs.at(k, ru, c));
                gx.at(k, r, c) = dx;
                gy.at(k, r, c) = dy;
                const double m = std::sqrt(dx * dx + dy * dy);
                mag.at(k, r, c) = m;
                g.at(r, c) += m * inv_c;
            }

    StackLoss out;
    out.grad = GridStack(C, H, W, 0.0);
    Grid d_g(H, W, 0.0);
    double acc = 0.0;
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            const double e_raw = 1.0 - std::exp(-g.at(r, c) / cfg.sigma);
            const double e = std::clamp(e_raw, eps, 1.0 - eps);
            epred.at(r, c) = e;
            const double t = edge_gt.at(r, c);
            acc -= t * std::log(e) + (1.0 - t) * std::log(1.0 - e);
            if (e_raw > eps && e_raw < 1.0 - eps) {
                const double d_e = inv_n * (-t / e + (1.0 - t) / (1.0 - e));
                d_g.at(r, c) = d_e * std::exp(-g.at(r, c) / cfg.sigma) / cfg.sigma;
            }
        }
    out.value = acc * inv_n;

    // backward through the magnitude and the difference stencil
    for (int k = 0; k < C; ++k)
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                const double m = mag.at(k, r, c);
                if (m < 1e-300) continue;
                const double d_m = d_g.at(r, c) * inv_c;
                const double d_dx = d_m * gx.at(k, r, c) / m;
                const double d_dy = d_m * gy.at(k, r, c) / m;
                const int cl = std::max(c - 1, 0), cr = std::min(c + 1, W - 1);
                const int ru = std::max(r - 1, 0), rd = std::min(r + 1, H - 1);
                out.grad.at(k, r, cr) += 0.5 * d_dx;
                out.grad.at(k, r, cl) -= 0.5 * d_dx;
                out.grad.at(k, rd, c) += 0.5 * d_dy;
                out.grad.at(k, ru, c) -= 0.5 * d_dy;
            }
    return out;
}

StackLoss smoothness_loss(const GridStack& pred, const GridStack& gt) {
    require(pred.c == gt.c && pred.h == gt.h && pred.w == gt.w, "smoothness_loss: shape mismatch");
    const double n = static_cast<double>(pred.size());
    const double ss = kernels::sumsq_diff(pred.v, gt.v);

    StackLoss out;
    out.value = std::sqrt(ss) / std::sqrt(n);
    out.grad = GridStack(pred.c, pred.h, pred.w, 0.0);
    if (ss > 0.0) {
        const double scale = 1.0 / (std::sqrt(ss) * std::sqrt(n));
        kernels::axpy(scale, pred.v, std::span<double>(out.grad.v));
        kernels::axpy(-scale, gt.v, std::span<double>(out.grad.v));
    }
    return out;
}

StackLoss geo_loss(const StackLoss& edge, const StackLoss& smooth, const LossWeights& weights) {
    weights.validate();
    require(edge.grad.size() == smooth.grad.size(), "geo_loss: component shape mismatch");
    StackLoss out;
    out.value = weights.l4 * edge.value + weights.l5 * smooth.value;
    out.grad = GridStack(edge.grad.c, edge.grad.h, edge.grad.w, 0.0);
    kernels::axpy(weights.l4, edge.grad.v, std::span<double>(out.grad.v));
    kernels::axpy(weights.l5, smooth.grad.v, std::span<double>(out.grad.v));
    return out;
}

ContrastiveLoss contrastive_loss(const Matrix& q_obj, const Matrix& q_txt,
                                 const ContrastiveConfig& cfg) {
    cfg.validate();
    const int B = q_obj.rows, d = q_obj.cols;
    require(B >= 1, "contrastive_loss: batch must be >= 1");
    require(q_txt.rows == B && q_txt.cols == d, "contrastive_loss: shape mismatch");
    const double tau = cfg.tau;

    Matrix s(B, B);
    for (int i = 0; i < B; ++i)
        for (int j = 0; j < B; ++j) s.at(i, j) = kernels::dot(q_obj.row(i), q_txt.row(j)) / tau;

    // row softmax (obj -> txt) and column softmax (txt -> obj)
    Matrix a(B, B), b(B, B);
    double value = 0.0;
    for (int i = 0; i < B; ++i) {
        double mx = s.at(i, 0);
        for (int j = 1; j < B; ++j) mx = std::max(mx, s.at(i, j));
        double z = 0.0;
        for (int j = 0; j < B; ++j) z += std::exp(s.at(i, j) - mx);
        for (int j = 0; j < B; ++j) a.at(i, j) = std::exp(s.at(i, j) - mx) / z;
        value -= (s.at(i, i) - mx - std::log(z)) / B;
    }
    for (int j = 0; j < B; ++j) {
        double mx = s.at(0, j);
        for (int i = 1; i < B; ++i) mx = std::max(mx, s.at(i, j));
        double z = 0.0;
        for (int i = 0; i < B; ++i) z += std::exp(s.at(i, j) - mx);
        for (int i = 0; i < B; ++i) b.at(i, j) = std::exp(s.at(i, j) - mx) / z;
        value -= (s.at(j, j) - mx - std::log(z)) / B;
    }

    ContrastiveLoss out;
    out.value = B == 1 ? 0.0 : value; // single-row softmax is exact zero
    out.d_obj = Matrix(B, d);
    out.d_txt = Matrix(B, d);
    for (int i = 0; i < B; ++i)
        for (int j = 0; j < B; ++j) {
            const double gij = (a.at(i, j) + b.at(i, j) - 2.0 * (i == j ? 1.0 : 0.0)) / B;
            if (gij == 0.0) continue;
            kernels::axpy(gij / tau, q_txt.row(j), out.d_obj.row(i));
            kernels::axpy(gij / tau, q_obj.row(i), out.d_txt.row(j));
            out.d_tau -= gij * s.at(i, j) / tau;
        }
    return out;
}

TotalLoss total_loss(const SurfaceLoss& surface, const ContrastiveLoss& contrastive,
                     const StackLoss& geo) {
    require(surface.d_probs.size() == geo.grad.size(), "total_loss: stack shape mismatch");
    TotalLoss out;
    out.value = surface.value + contrastive.value + geo.value;
    out.d_probs = surface.d_probs;
    kernels::axpy(1.0, geo.grad.v, std::span<double>(out.d_probs.v));
    out.d_masks = surface.d_masks;
    out.d_obj = contrastive.d_obj;
    out.d_txt = contrastive.d_txt;
    out.d_tau = contrastive.d_tau;
    return out;
}

} // namespace lf
