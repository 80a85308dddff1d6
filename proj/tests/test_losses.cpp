#include <doctest.h>

#include <cmath>

#include "layoutforge/gradcheck.hpp"
#include "layoutforge/losses.hpp"
#include "layoutforge/rng.hpp"

using namespace lf;

namespace {

GridStack uniform_stack(int c, int h, int w) { return GridStack(c, h, w, 1.0 / c); }

GridStack random_prob_stack(CounterRng& rng, int c, int h, int w) {
    GridStack stack(c, h, w);
    for (int r = 0; r < h; ++r)
        for (int cc = 0; cc < w; ++cc) {
            double z = 0.0;
            for (int k = 0; k < c; ++k) {
                stack.at(k, r, cc) = std::exp(rng.gaussian());
                z += stack.at(k, r, cc);
            }
            for (int k = 0; k < c; ++k) stack.at(k, r, cc) /= z;
        }
    return stack;
}

LayoutMask random_mask(CounterRng& rng, int h, int w) {
    LayoutMask m(h, w);
    for (auto& l : m.labels) l = static_cast<uint8_t>(rng.below(kNumClasses));
    return m;
}

} // namespace

TEST_CASE("ce_loss: identity, symmetry, per-pixel oracle") {
    CounterRng rng(1);
    const LayoutMask labels = random_mask(rng, 4, 4);

    GridStack onehot = one_hot_stack(labels);
    CHECK(ce_loss(onehot, labels).value == doctest::Approx(0.0).epsilon(1e-9));

    CHECK(ce_loss(uniform_stack(kNumClasses, 4, 4), labels).value ==
          doctest::Approx(std::log(6.0)).epsilon(1e-12));

    const GridStack probs = random_prob_stack(rng, kNumClasses, 4, 4);
    double expect = 0.0;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) expect -= std::log(probs.at(labels.at(r, c), r, c));
    expect /= 16.0;
    CHECK(ce_loss(probs, labels).value == doctest::Approx(expect).epsilon(1e-12));

    GridStack bad(kNumClasses, 3, 3);
    CHECK_THROWS_AS(ce_loss(bad, labels), std::invalid_argument);
}

TEST_CASE("dice_loss: identity, disjoint, direct formula") {
    Grid gt(4, 4, 0.0);
    gt.at(1, 1) = gt.at(1, 2) = gt.at(2, 1) = 1.0; // S = 3
    const double eps = 1e-6;
    CHECK(dice_loss(gt, gt, eps).value == doctest::Approx(eps / (6.0 + eps)).epsilon(1e-9));

    Grid pred(4, 4, 0.0);
    pred.at(0, 0) = 1.0;
    CHECK(dice_loss(pred, gt, eps).value == doctest::Approx(1.0).epsilon(1e-9));

    CounterRng rng(2);
    Grid p(4, 4), g(4, 4);
    for (auto& v : p.v) v = rng.uniform();
    for (auto& v : g.v) v = rng.below(2) ? 1.0 : 0.0;
    double inter = 0, psq = 0, gsq = 0;
    for (size_t i = 0; i < p.v.size(); ++i) {
        inter += p.v[i] * g.v[i];
        psq += p.v[i] * p.v[i];
        gsq += g.v[i] * g.v[i];
    }
    CHECK(dice_loss(p, g, eps).value ==
          doctest::Approx(1.0 - 2.0 * inter / (psq + gsq + eps)).epsilon(1e-12));
}

TEST_CASE("bce_mask_loss: identity, half, direct sum") {
    Grid gt(4, 4, 0.0);
    gt.at(2, 2) = 1.0;
    CHECK(bce_mask_loss(gt, gt).value == doctest::Approx(-std::log(1.0 - 1e-7)).epsilon(1e-6));

    Grid half(4, 4, 0.5);
    CHECK(bce_mask_loss(half, gt).value == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    CounterRng rng(3);
    Grid p(4, 4), g(4, 4);
    for (auto& v : p.v) v = rng.uniform(0.05, 0.95);
    for (auto& v : g.v) v = rng.below(2) ? 1.0 : 0.0;
    double expect = 0.0;
    for (size_t i = 0; i < p.v.size(); ++i)
        expect -= g.v[i] * std::log(p.v[i]) + (1.0 - g.v[i]) * std::log(1.0 - p.v[i]);
    CHECK(bce_mask_loss(p, g).value == doctest::Approx(expect / 16.0).epsilon(1e-12));
}

TEST_CASE("surface_loss: weighted combination is exactly linear") {
    CounterRng rng(4);
    const LayoutMask gt = random_mask(rng, 6, 6);
    const GridStack probs = random_prob_stack(rng, kNumClasses, 6, 6);
    std::vector<Grid> masks;
    for (int k = 0; k < kNumSurfaces; ++k) {
        Grid m(6, 6);
        for (auto& v : m.v) v = rng.uniform(0.05, 0.95);
        masks.push_back(std::move(m));
    }
    const LossWeights w; // 2, 5, 5
    const SurfaceLoss sl = surface_loss(probs, masks, gt, w);
    CHECK(sl.value ==
          doctest::Approx(2.0 * sl.ce + 5.0 * sl.dice_mean + 5.0 * sl.bce_mean).epsilon(1e-12));

    // component means recomputed independently
    CHECK(sl.ce == doctest::Approx(ce_loss(probs, gt).value).epsilon(1e-12));
    double dice_mean = 0, bce_mean = 0;
    for (int k = 0; k < kNumSurfaces; ++k) {
        const Grid gk = class_binary(gt, k + 1);
        dice_mean += dice_loss(masks[k], gk).value / kNumSurfaces;
        bce_mean += bce_mask_loss(masks[k], gk).value / kNumSurfaces;
    }
    CHECK(sl.dice_mean == doctest::Approx(dice_mean).epsilon(1e-12));
    CHECK(sl.bce_mean == doctest::Approx(bce_mean).epsilon(1e-12));

    // weighted-sum arithmetic on pinned component values
    CHECK(2.0 * 0.1 + 5.0 * 0.2 + 5.0 * 0.3 == doctest::Approx(2.7).epsilon(1e-12));
}

TEST_CASE("gt_edge_map: constant, vertical split, neighbour-scan oracle") {
    EdgeLossConfig cfg;
    cfg.gt_dilation = 0;

    for (double v : gt_edge_map(LayoutMask(6, 6, 2), cfg).v) CHECK(v == 0.0);

    LayoutMask split(6, 8, 1);
    for (int r = 0; r < 6; ++r)
        for (int c = 4; c < 8; ++c) split.at(r, c) = 2;
    const Grid edge = gt_edge_map(split, cfg);
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 8; ++c) CHECK(edge.at(r, c) == ((c == 3 || c == 4) ? 1.0 : 0.0));

    CounterRng rng(5);
    const LayoutMask m = random_mask(rng, 8, 8);
    const Grid e = gt_edge_map(m, cfg);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) {
            bool diff = false;
            if (r > 0) diff |= m.at(r - 1, c) != m.at(r, c);
            if (r < 7) diff |= m.at(r + 1, c) != m.at(r, c);
            if (c > 0) diff |= m.at(r, c - 1) != m.at(r, c);
            if (c < 7) diff |= m.at(r, c + 1) != m.at(r, c);
            CHECK(e.at(r, c) == (diff ? 1.0 : 0.0));
        }

    // one dilation round grows the split bands by one pixel
    cfg.gt_dilation = 1;
    const Grid dilated = gt_edge_map(split, cfg);
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 8; ++c)
            CHECK(dilated.at(r, c) == ((c >= 2 && c <= 5) ? 1.0 : 0.0));
}

TEST_CASE("edge_loss: constant predictions hit the clamped extremes") {
    EdgeLossConfig cfg;
    const GridStack flat(kNumClasses, 6, 6, 1.0 / kNumClasses);

    const StackLoss quiet = edge_loss(flat, Grid(6, 6, 0.0), cfg);
    CHECK(quiet.value == doctest::Approx(-std::log(1.0 - cfg.clamp_eps)).epsilon(1e-6));
    for (double g : quiet.grad.v) CHECK(g == 0.0); // stationary at a flat field

    const StackLoss loud = edge_loss(flat, Grid(6, 6, 1.0), cfg);
    CHECK(loud.value == doctest::Approx(-std::log(cfg.clamp_eps)).epsilon(1e-9));
    CHECK(std::isfinite(loud.value));
}

TEST_CASE("smoothness_loss: identity, homogeneity, direct recomputation") {
    CounterRng rng(6);
    const GridStack gt = one_hot_stack(random_mask(rng, 4, 4));
    CHECK(smoothness_loss(gt, gt).value == 0.0);

    GridStack shifted = gt;
    for (auto& v : shifted.v) v += 0.37;
    CHECK(smoothness_loss(shifted, gt).value == doctest::Approx(0.37).epsilon(1e-12));

    GridStack pred(kNumClasses, 4, 4);
    for (auto& v : pred.v) v = rng.uniform();
    double ss = 0.0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const double dlt = pred.v[i] - gt.v[i];
        ss += dlt * dlt;
    }
    CHECK(smoothness_loss(pred, gt).value ==
          doctest::Approx(std::sqrt(ss / pred.v.size())).epsilon(1e-12));
}

TEST_CASE("geo_loss: linear in its components") {
    StackLoss e, s;
    e.value = 0.2;
    e.grad = GridStack(1, 2, 2, 0.5);
    s.value = 0.3;
    s.grad = GridStack(1, 2, 2, -0.25);
    const LossWeights w; // l4 = l5 = 1
    const StackLoss g = geo_loss(e, s, w);
    CHECK(g.value == doctest::Approx(0.5).epsilon(1e-12));
    for (double v : g.grad.v) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

    StackLoss zero_e, zero_s;
    zero_e.grad = GridStack(1, 1, 1, 0.0);
    zero_s.grad = GridStack(1, 1, 1, 0.0);
    CHECK(geo_loss(zero_e, zero_s, w).value == 0.0);
}

TEST_CASE("contrastive_loss: batch-1 is exactly zero, identical rows give 2 ln B") {
    ContrastiveConfig cfg;
    Matrix one(1, 5);
    for (int j = 0; j < 5; ++j) one.at(0, j) = 0.3 * j - 1.0;
    const ContrastiveLoss l1 = contrastive_loss(one, one, cfg);
    CHECK(l1.value == 0.0);
    for (double g : l1.d_obj.v) CHECK(g == 0.0);
    for (double g : l1.d_txt.v) CHECK(g == 0.0);
    CHECK(l1.d_tau == 0.0);

    Matrix same(4, 3);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) same.at(i, j) = 0.1 * j + 0.7;
    CHECK(contrastive_loss(same, same, cfg).value ==
          doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-12));

    Matrix empty(0, 3);
    CHECK_THROWS_AS(contrastive_loss(empty, empty, cfg), std::invalid_argument);
}

TEST_CASE("contrastive_loss: direct two-loop recomputation and row-permutation invariance") {
    CounterRng rng(7);
    const int B = 3, d = 5;
    Matrix obj(B, d), txt(B, d);
    for (auto& v : obj.v) v = rng.gaussian();
    for (auto& v : txt.v) v = rng.gaussian();
    ContrastiveConfig cfg;
    cfg.tau = 0.07;

    double expect = 0.0;
    for (int i = 0; i < B; ++i) {
        double num = 0, den_row = 0, den_col = 0;
        for (int k = 0; k < d; ++k) num += obj.at(i, k) * txt.at(i, k);
        for (int j = 0; j < B; ++j) {
            double sij = 0, sji = 0;
            for (int k = 0; k < d; ++k) {
                sij += obj.at(i, k) * txt.at(j, k);
                sji += txt.at(i, k) * obj.at(j, k);
            }
            den_row += std::exp(sij / cfg.tau);
            den_col += std::exp(sji / cfg.tau);
        }
        expect -= std::log(std::exp(num / cfg.tau) / den_row) / B;
        expect -= std::log(std::exp(num / cfg.tau) / den_col) / B;
    }
    CHECK(contrastive_loss(obj, txt, cfg).value == doctest::Approx(expect).epsilon(1e-10));

    // simultaneous row permutation leaves the value unchanged
    const int perm[B] = {2, 0, 1};
    Matrix obj_p(B, d), txt_p(B, d);
    for (int i = 0; i < B; ++i)
        for (int k = 0; k < d; ++k) {
            obj_p.at(i, k) = obj.at(perm[i], k);
            txt_p.at(i, k) = txt.at(perm[i], k);
        }
    CHECK(contrastive_loss(obj_p, txt_p, cfg).value ==
          doctest::Approx(contrastive_loss(obj, txt, cfg).value).epsilon(1e-12));
}

TEST_CASE("total_loss: unweighted sum, stack gradients accumulate") {
    SurfaceLoss s;
    s.value = 1.0;
    s.d_probs = GridStack(2, 2, 2, 0.5);
    s.d_masks.assign(kNumSurfaces, Grid(2, 2, 0.1));
    ContrastiveLoss c;
    c.value = 2.0;
    c.d_obj = Matrix(2, 3, 0.0);
    c.d_txt = Matrix(2, 3, 0.0);
    StackLoss g;
    g.value = 3.0;
    g.grad = GridStack(2, 2, 2, 0.25);

    const TotalLoss t = total_loss(s, c, g);
    CHECK(t.value == doctest::Approx(6.0).epsilon(1e-12));
    for (double v : t.d_probs.v) CHECK(v == doctest::Approx(0.75).epsilon(1e-12));

    SurfaceLoss s0;
    s0.d_probs = GridStack(1, 1, 1, 0.0);
    ContrastiveLoss c0;
    StackLoss g0;
    g0.grad = GridStack(1, 1, 1, 0.0);
    CHECK(total_loss(s0, c0, g0).value == 0.0);
}

TEST_CASE("loss bounds hold on random instances") {
    CounterRng rng(8);
    for (int trial = 0; trial < 25; ++trial) {
        const LayoutMask gt = random_mask(rng, 5, 5);
        const GridStack probs = random_prob_stack(rng, kNumClasses, 5, 5);
        Grid p(5, 5), g(5, 5);
        for (auto& v : p.v) v = rng.uniform();
        for (auto& v : g.v) v = rng.below(2) ? 1.0 : 0.0;

        const double max_log = -std::log(1e-7);
        CHECK(ce_loss(probs, gt).value >= 0.0);
        CHECK(ce_loss(probs, gt).value <= max_log);
        const double dice = dice_loss(p, g).value;
        CHECK(dice >= 0.0);
        CHECK(dice <= 1.0);
        const double bce = bce_mask_loss(p, g).value;
        CHECK(bce >= 0.0);
        CHECK(bce <= max_log);
        CHECK(smoothness_loss(probs, one_hot_stack(gt)).value >= 0.0);
    }
}

TEST_CASE("gradcheck: linearity is exact, harness catches corruption") {
    CounterRng rng(9);
    // dyadic coefficients, point, and step keep the central difference exact
    std::vector<double> coeff(20);
    for (auto& c : coeff) c = static_cast<double>(rng.below(257)) / 64.0 - 2.0;
    ValueFn f = [&coeff](std::span<const double> x) {
        double s = 0.0;
        for (size_t i = 0; i < x.size(); ++i) s += coeff[i] * x[i];
        return s;
    };
    GradFn g = [&coeff](std::span<const double>) { return coeff; };
    std::vector<double> x0(20, 0.5);
    const GradCheckEntry ok = gradcheck("linear", f, g, x0, 0x1.0p-16, 1e-12, 20, rng);
    CHECK(ok.pass);
    CHECK(ok.max_rel_err < 1e-12);

    GradFn bad = [&coeff](std::span<const double>) {
        std::vector<double> v = coeff;
        for (auto& c : v) c *= 2.0;
        return v;
    };
    CHECK_FALSE(gradcheck("linear_bad", f, bad, x0, 0x1.0p-16, 1e-12, 20, rng).pass);
}

TEST_CASE("gradcheck: every loss kernel passes; injected bug fails") {
    const CheckReport report = gradcheck_losses(12345);
    CHECK(report.all_pass());
    CHECK(report.entries.size() == 9);
    for (const auto& e : report.entries) {
        CHECK(e.pass);
        CHECK(e.checked >= 100);
        CHECK(e.max_rel_err < 1e-4);
    }

    const CheckReport broken = gradcheck_losses(12345, 1e-5, 1e-4, "dice");
    CHECK_FALSE(broken.all_pass());
    for (const auto& e : broken.entries)
        if (e.name == "dice") CHECK_FALSE(e.pass);
}
