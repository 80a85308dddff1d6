#include "layoutforge/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "layoutforge/losses.hpp"

namespace lf {

bool CheckReport::all_pass() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.pass; });
}

std::string CheckReport::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries)
        arr.push_back({{"name", e.name},
                       {"dim", e.dim},
                       {"checked", e.checked},
                       {"h", e.h},
                       {"tol", e.tol},
                       {"max_rel_err", e.max_rel_err},
                       {"worst_index", e.worst_index},
                       {"worst_analytic", e.worst_analytic},
                       {"worst_numeric", e.worst_numeric},
                       {"pass", e.pass}});
    return nlohmann::json{{"all_pass", all_pass()}, {"kernels", arr}}.dump(2);
}

std::string CheckReport::summary() const {
    std::ostringstream os;
    for (const auto& e : entries) {
        os << (e.pass ? "PASS" : "FAIL") << "  " << e.name << "  max_rel_err=" << e.max_rel_err
           << "  (checked " << e.checked << "/" << e.dim << " coords, tol " << e.tol << ")\n";
    }
    return os.str();
}

GradCheckEntry gradcheck(const std::string& name, const ValueFn& f, const GradFn& g,
                         std::vector<double> x0, double h, double tol, int max_coords,
                         CounterRng& rng) {
    std::vector<int> coords(x0.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (static_cast<int>(x0.size()) > max_coords) {
        for (int i = 0; i < max_coords; ++i) {
            const int j = i + static_cast<int>(rng.below(coords.size() - i));
            std::swap(coords[i], coords[j]);
        }
        coords.resize(max_coords);
    }
    return gradcheck_at(name, f, g, std::move(x0), coords, h, tol);
}

GradCheckEntry gradcheck_at(const std::string& name, const ValueFn& f, const GradFn& g,
                            std::vector<double> x0, std::span<const int> coords, double h,
                            double tol) {
    GradCheckEntry entry;
    entry.name = name;
    entry.dim = static_cast<int>(x0.size());
    entry.h = h;
    entry.tol = tol;

    const std::vector<double> analytic = g(x0);
    entry.pass = true;
    for (int idx : coords) {
        const double keep = x0[idx];
        x0[idx] = keep + h;
        const double fp = f(x0);
        x0[idx] = keep - h;
        const double fm = f(x0);
        x0[idx] = keep;

        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[idx];
        if (!std::isfinite(numeric) || !std::isfinite(a)) {
            entry.pass = false;
            entry.max_rel_err = std::numeric_limits<double>::infinity();
            entry.worst_index = idx;
            entry.worst_analytic = a;
            entry.worst_numeric = numeric;
            return entry;
        }
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
        if (rel > entry.max_rel_err) {
            entry.max_rel_err = rel;
            entry.worst_index = idx;
            entry.worst_analytic = a;
            entry.worst_numeric = numeric;
        }
        ++entry.checked;
    }
    entry.pass = entry.max_rel_err <= tol;
    return entry;
}

// ---------------------------------------------------------------------------
// Seeded random instances for every loss kernel
// ---------------------------------------------------------------------------

namespace {

constexpr int kH = 6, kW = 6;

GridStack random_prob_stack(CounterRng& rng, int c = kNumClasses, int h = kH, int w = kW) {
    GridStack stack(c, h, w);
    for (int r = 0; r < h; ++r)
        for (int cc = 0; cc < w; ++cc) {
            double z = 0.0;
            std::vector<double> e(c);
            for (int k = 0; k < c; ++k) {
                e[k] = std::exp(rng.gaussian());
                z += e[k];
            }
            for (int k = 0; k < c; ++k) stack.at(k, r, cc) = e[k] / z;
        }
    return stack;
}

LayoutMask random_mask(CounterRng& rng, int h = kH, int w = kW) {
    LayoutMask mask(h, w);
    for (auto& l : mask.labels) l = static_cast<uint8_t>(rng.below(kNumClasses));
    return mask;
}

Grid random_unit_grid(CounterRng& rng, double lo = 0.05, double hi = 0.95, int h = kH, int w = kW) {
    Grid g(h, w);
    for (auto& v : g.v) v = rng.uniform(lo, hi);
    return g;
}

Grid random_binary_grid(CounterRng& rng, int h = kH, int w = kW) {
    Grid g(h, w);
    for (auto& v : g.v) v = rng.below(2) ? 1.0 : 0.0;
    return g;
}

struct Target {
    std::string name;
    ValueFn f;
    GradFn g;
    std::vector<double> x0;
};

std::vector<Target> make_loss_targets(uint64_t seed, int instance) {
    CounterRng rng(seed, 100 + instance);
    std::vector<Target> targets;
    const LossWeights weights;
    const EdgeLossConfig edge_cfg;
    const ContrastiveConfig ctr_cfg;

    // ce
    {
        const LayoutMask labels = random_mask(rng);
        GridStack stack = random_prob_stack(rng);
        targets.push_back(
            {"ce",
             [labels, shape = stack](std::span<const double> x) {
                 GridStack s = shape;
                 s.v.assign(x.begin(), x.end());
                 return ce_loss(s, labels).value;
             },
             [labels, shape = stack](std::span<const double> x) {
                 GridStack s = shape;
                 s.v.assign(x.begin(), x.end());
                 return ce_loss(s, labels).grad.v;
             },
             stack.v});
    }
    // dice
    {
        const Grid pred = random_unit_grid(rng);
        const Grid gt = random_binary_grid(rng);
        targets.push_back({"dice",
                           [gt, pred](std::span<const double> x) {
                               Grid p = pred;
                               p.v.assign(x.begin(), x.end());
                               return dice_loss(p, gt).value;
                           },
                           [gt, pred](std::span<const double> x) {
                               Grid p = pred;
                               p.v.assign(x.begin(), x.end());
                               return dice_loss(p, gt).grad.v;
                           },
                           pred.v});
    }
    // bce
    {
        const Grid pred = random_unit_grid(rng);
        const Grid gt = random_binary_grid(rng);
        targets.push_back({"bce",
                           [gt, pred](std::span<const double> x) {
                               Grid p = pred;
                               p.v.assign(x.begin(), x.end());
                               return bce_mask_loss(p, gt).value;
                           },
                           [gt, pred](std::span<const double> x) {
                               Grid p = pred;
                               p.v.assign(x.begin(), x.end());
                               return bce_mask_loss(p, gt).grad.v;
                           },
                           pred.v});
    }
    // surface: x = [probs | 5 class masks]
    {
        const LayoutMask gt = random_mask(rng);
        GridStack probs = random_prob_stack(rng);
        std::vector<Grid> masks;
        for (int k = 0; k < kNumSurfaces; ++k) masks.push_back(random_unit_grid(rng));
        const size_t np = probs.v.size(), nm = masks[0].v.size();
        std::vector<double> x0 = probs.v;
        for (const auto& m : masks) x0.insert(x0.end(), m.v.begin(), m.v.end());

        auto unpack = [probs, masks, np, nm](std::span<const double> x, GridStack& p,
                                             std::vector<Grid>& m) {
            p = probs;
            std::copy(x.begin(), x.begin() + np, p.v.begin());
            m = masks;
            for (int k = 0; k < kNumSurfaces; ++k)
                std::copy(x.begin() + np + k * nm, x.begin() + np + (k + 1) * nm, m[k].v.begin());
        };
        targets.push_back({"surface",
                           [gt, weights, unpack](std::span<const double> x) {
                               GridStack p;
                               std::vector<Grid> m;
                               unpack(x, p, m);
                               return surface_loss(p, m, gt, weights).value;
                           },
                           [gt, weights, unpack, np, nm](std::span<const double> x) {
                               GridStack p;
                               std::vector<Grid> m;
                               unpack(x, p, m);
                               const SurfaceLoss sl = surface_loss(p, m, gt, weights);
                               std::vector<double> grad = sl.d_probs.v;
                               for (const auto& dm : sl.d_masks)
                                   grad.insert(grad.end(), dm.v.begin(), dm.v.end());
                               return grad;
                           },
                           x0});
    }
    // edge
    {
        GridStack stack(kNumClasses, kH, kW);
        for (auto& v : stack.v) v = rng.uniform(0.1, 0.9);
        const LayoutMask mask = random_mask(rng);
        const Grid egt = gt_edge_map(mask, edge_cfg);
        targets.push_back({"edge",
                           [egt, edge_cfg, shape = stack](std::span<const double> x) {
                               GridStack s = shape;
                               s.v.assign(x.begin(), x.end());
                               return edge_loss(s, egt, edge_cfg).value;
                           },
                           [egt, edge_cfg, shape = stack](std::span<const double> x) {
                               GridStack s = shape;
                               s.v.assign(x.begin(), x.end());
                               return edge_loss(s, egt, edge_cfg).grad.v;
                           },
                           stack.v});
    }
    // smoothness
    {
        GridStack pred(kNumClasses, kH, kW);
        for (auto& v : pred.v) v = rng.uniform(0.0, 1.0);
        const GridStack gt = one_hot_stack(random_mask(rng));
        targets.push_back({"smoothness",
                           [gt, shape = pred](std::span<const double> x) {
                               GridStack p = shape;
                               p.v.assign(x.begin(), x.end());
                               return smoothness_loss(p, gt).value;
                           },
                           [gt, shape = pred](std::span<const double> x) {
                               GridStack p = shape;
                               p.v.assign(x.begin(), x.end());
                               return smoothness_loss(p, gt).grad.v;
                           },
                           pred.v});
    }
    // geo: both components evaluated on the same stack
    {
        GridStack pred(kNumClasses, kH, kW);
        for (auto& v : pred.v) v = rng.uniform(0.1, 0.9);
        const LayoutMask mask = random_mask(rng);
        const Grid egt = gt_edge_map(mask, edge_cfg);
        const GridStack onehot = one_hot_stack(mask);
        auto eval = [egt, onehot, edge_cfg, weights, shape = pred](std::span<const double> x) {
            GridStack p = shape;
            p.v.assign(x.begin(), x.end());
            return geo_loss(edge_loss(p, egt, edge_cfg), smoothness_loss(p, onehot), weights);
        };
        targets.push_back(
            {"geo", [eval](std::span<const double> x) { return eval(x).value; },
             [eval](std::span<const double> x) { return eval(x).grad.v; }, pred.v});
    }
    // contrastive: x = [q_obj | q_txt | tau]
    {
        const int B = 3, d = 5;
        Matrix obj(B, d), txt(B, d);
        // moderate similarities keep the softmax inside the FD linear regime
        for (auto& v : obj.v) v = 0.4 * rng.gaussian();
        for (auto& v : txt.v) v = 0.4 * rng.gaussian();
        std::vector<double> x0 = obj.v;
        x0.insert(x0.end(), txt.v.begin(), txt.v.end());
        x0.push_back(ctr_cfg.tau);

        auto eval = [B, d](std::span<const double> x) {
            Matrix o(B, d), t(B, d);
            std::copy(x.begin(), x.begin() + B * d, o.v.begin());
            std::copy(x.begin() + B * d, x.begin() + 2 * B * d, t.v.begin());
            ContrastiveConfig cfg;
            cfg.tau = x[2 * B * d];
            return contrastive_loss(o, t, cfg);
        };
        targets.push_back({"contrastive",
                           [eval](std::span<const double> x) { return eval(x).value; },
                           [eval](std::span<const double> x) {
                               const ContrastiveLoss l = eval(x);
                               std::vector<double> grad = l.d_obj.v;
                               grad.insert(grad.end(), l.d_txt.v.begin(), l.d_txt.v.end());
                               grad.push_back(l.d_tau);
                               return grad;
                           },
                           x0});
    }
    // total: x = [probs | 5 masks | q_obj | q_txt | tau]
    {
        const LayoutMask gt = random_mask(rng);
        GridStack probs = random_prob_stack(rng);
        std::vector<Grid> masks;
        for (int k = 0; k < kNumSurfaces; ++k) masks.push_back(random_unit_grid(rng));
        const int B = 3, d = 5;
        Matrix obj(B, d), txt(B, d);
        for (auto& v : obj.v) v = 0.4 * rng.gaussian();
        for (auto& v : txt.v) v = 0.4 * rng.gaussian();
        const Grid egt = gt_edge_map(gt, edge_cfg);
        const GridStack onehot = one_hot_stack(gt);

        const size_t np = probs.v.size(), nm = masks[0].v.size();
        std::vector<double> x0 = probs.v;
        for (const auto& m : masks) x0.insert(x0.end(), m.v.begin(), m.v.end());
        x0.insert(x0.end(), obj.v.begin(), obj.v.end());
        x0.insert(x0.end(), txt.v.begin(), txt.v.end());
        x0.push_back(ctr_cfg.tau);

        auto eval = [=](std::span<const double> x) {
            GridStack p = probs;
            std::copy(x.begin(), x.begin() + np, p.v.begin());
            std::vector<Grid> m = masks;
            for (int k = 0; k < kNumSurfaces; ++k)
                std::copy(x.begin() + np + k * nm, x.begin() + np + (k + 1) * nm, m[k].v.begin());
            Matrix o(B, d), t(B, d);
            const size_t base = np + kNumSurfaces * nm;
            std::copy(x.begin() + base, x.begin() + base + B * d, o.v.begin());
            std::copy(x.begin() + base + B * d, x.begin() + base + 2 * B * d, t.v.begin());
            ContrastiveConfig cc;
            cc.tau = x[base + 2 * B * d];
            const SurfaceLoss sl = surface_loss(p, m, gt, weights);
            const StackLoss gl = geo_loss(edge_loss(p, egt, edge_cfg), smoothness_loss(p, onehot), weights);
            return total_loss(sl, contrastive_loss(o, t, cc), gl);
        };
        targets.push_back({"total",
                           [eval](std::span<const double> x) { return eval(x).value; },
                           [eval](std::span<const double> x) {
                               const TotalLoss l = eval(x);
                               std::vector<double> grad = l.d_probs.v;
                               for (const auto& dm : l.d_masks)
                                   grad.insert(grad.end(), dm.v.begin(), dm.v.end());
                               grad.insert(grad.end(), l.d_obj.v.begin(), l.d_obj.v.end());
                               grad.insert(grad.end(), l.d_txt.v.begin(), l.d_txt.v.end());
                               grad.push_back(l.d_tau);
                               return grad;
                           },
                           x0});
    }
    return targets;
}

} // namespace

CheckReport gradcheck_losses(uint64_t seed, double h, double tol, const std::string& inject_bug) {
    CheckReport report;
    constexpr int kInstances = 5;
    constexpr int kCoordsPerInstance = 40;

    // aggregate per kernel across instances so each kernel reports one entry
    for (int inst = 0; inst < kInstances; ++inst) {
        CounterRng coord_rng(seed, 500 + inst);
        for (Target& t : make_loss_targets(seed, inst)) {
            GradFn g = t.g;
            if (t.name == inject_bug) {
                GradFn orig = t.g;
                g = [orig](std::span<const double> x) {
                    std::vector<double> v = orig(x);
                    for (double& e : v) e *= 2.0;
                    return v;
                };
            }
            GradCheckEntry e = gradcheck(t.name + "#" + std::to_string(inst), t.f, g,
                                         std::move(t.x0), h, tol, kCoordsPerInstance, coord_rng);
            if (inst == 0) {
                e.name = t.name;
                report.entries.push_back(e);
            } else {
                GradCheckEntry& agg = *std::find_if(report.entries.begin(), report.entries.end(),
                                                    [&](const auto& a) { return a.name == t.name; });
                agg.checked += e.checked;
                agg.dim += e.dim;
                if (e.max_rel_err > agg.max_rel_err) {
                    agg.max_rel_err = e.max_rel_err;
                    agg.worst_index = e.worst_index;
                    agg.worst_analytic = e.worst_analytic;
                    agg.worst_numeric = e.worst_numeric;
                }
                agg.pass = agg.pass && e.pass;
            }
        }
    }
    return report;
}

} // namespace lf
