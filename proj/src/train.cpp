#include "layoutforge/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "layoutforge/image.hpp"
#include "layoutforge/kernels.hpp"
#include "layoutforge/metrics.hpp"

namespace lf {

void OptimConfig::validate() const {
    if (lr < 0 || weight_decay < 0 || eps <= 0) throw std::invalid_argument("optim: bad lr/wd/eps");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
        throw std::invalid_argument("optim: betas must lie in [0,1)");
    if (epochs < 0 || batch_size < 1) throw std::invalid_argument("optim: bad epochs/batch");
}

std::string surface_text(const LayoutMask& mask) {
    std::string text;
    for (Surface s : surfaces_of(mask).items()) {
        if (!text.empty()) text += ' ';
        text += surface_name(s);
    }
    return text.empty() ? std::string("background") : text;
}

BatchLoss batch_loss_and_grads(std::span<const BatchSampleRef> batch, const ModelParams& params,
                               const TrainOptions& opts) {
    const int B = static_cast<int>(batch.size());
    if (B < 1) throw std::invalid_argument("batch_loss: empty batch");
    const int N = params.config.num_queries, d = params.config.embed_dim;
    const double inv_b = 1.0 / B;

    struct PerSample {
        ForwardCache fc;
        SurfaceLoss surface;
        StackLoss geo;
        TaskToken txt;
    };
    std::vector<PerSample> ps(B);

    auto run_forward = [&](int i) {
        PerSample& s = ps[i];
        s.fc = forward(*batch[i].image, params);
        const LayoutMask& gt = *batch[i].mask;
        s.surface = surface_loss(s.fc.pred.probs, std::span<const Grid>(&s.fc.pred.class_maps[1], kNumSurfaces),
                                 gt, opts.loss_weights, opts.clamp_eps, opts.dice_eps);
        const Grid egt = gt_edge_map(gt, opts.edge);
        s.geo = geo_loss(edge_loss(s.fc.pred.probs, egt, opts.edge),
                         smoothness_loss(s.fc.pred.probs, one_hot_stack(gt)), opts.loss_weights);
        s.txt = embed_task(surface_text(gt), params.token_table);
    };

    if (opts.threads > 1 && B > 1) {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        for (int t = 0; t < std::min(opts.threads, B); ++t)
            pool.emplace_back([&] {
                for (int i = next.fetch_add(1); i < B; i = next.fetch_add(1)) run_forward(i);
            });
        for (auto& t : pool) t.join();
    } else {
        for (int i = 0; i < B; ++i) run_forward(i);
    }

    // batch contrastive term: mean-pooled query embeddings vs text embeddings
    Matrix q_obj(B, d), q_txt(B, d);
    for (int i = 0; i < B; ++i) {
        for (int n = 0; n < N; ++n) kernels::axpy(1.0 / N, ps[i].fc.embeddings.row(n), q_obj.row(i));
        std::copy(ps[i].txt.embedding.begin(), ps[i].txt.embedding.end(), q_txt.row(i).begin());
    }
    ContrastiveConfig ctr_cfg;
    ctr_cfg.tau = params.tau.v[0];
    const ContrastiveLoss ctr = contrastive_loss(q_obj, q_txt, ctr_cfg);

    BatchLoss out;
    out.grads = params.zeros_like();
    for (int i = 0; i < B; ++i) out.value += inv_b * (ps[i].surface.value + ps[i].geo.value);
    out.value += ctr.value;
    out.grads.tau.v[0] += ctr.d_tau;

    auto run_backward = [&](int i, ModelParams& grads) {
        PerSample& s = ps[i];
        GridStack d_probs = s.surface.d_probs;
        kernels::axpy(1.0, s.geo.grad.v, std::span<double>(d_probs.v));
        kernels::scale(std::span<double>(d_probs.v), inv_b);
        std::vector<Grid> d_masks = std::move(s.surface.d_masks);
        for (auto& g : d_masks) kernels::scale(g.span(), inv_b);

        Matrix d_emb(N, d);
        for (int n = 0; n < N; ++n) kernels::axpy(1.0 / N, ctr.d_obj.row(i), d_emb.row(n));

        backward(s.fc, params, d_probs, d_masks, d_emb, grads);
        embed_task_backward(s.txt, ctr.d_txt.row(i), grads.token_table);

        out.pe_sum += pixel_error(assign_labels(s.fc.pred.probs), *batch[i].mask);
    };

    if (opts.threads > 1 && B > 1) {
        // per-sample gradient buffers, reduced in sample order
        std::vector<ModelParams> partial(B, params.zeros_like());
        std::vector<double> pe(B, 0.0);
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        for (int t = 0; t < std::min(opts.threads, B); ++t)
            pool.emplace_back([&] {
                for (int i = next.fetch_add(1); i < B; i = next.fetch_add(1)) {
                    PerSample& s = ps[i];
                    GridStack d_probs = s.surface.d_probs;
                    kernels::axpy(1.0, s.geo.grad.v, std::span<double>(d_probs.v));
                    kernels::scale(std::span<double>(d_probs.v), inv_b);
                    std::vector<Grid> d_masks = s.surface.d_masks;
                    for (auto& g : d_masks) kernels::scale(g.span(), inv_b);
                    Matrix d_emb(N, d);
                    for (int nn = 0; nn < N; ++nn)
                        kernels::axpy(1.0 / N, ctr.d_obj.row(i), d_emb.row(nn));
                    backward(s.fc, params, d_probs, d_masks, d_emb, partial[i]);
                    embed_task_backward(s.txt, ctr.d_txt.row(i), partial[i].token_table);
                    pe[i] = pixel_error(assign_labels(s.fc.pred.probs), *batch[i].mask);
                }
            });
        for (auto& t : pool) t.join();
        auto dst = out.grads.named();
        for (int i = 0; i < B; ++i) {
            auto src = partial[i].named();
            for (size_t t = 0; t < dst.size(); ++t)
                kernels::axpy(1.0, src[t].tensor->span(), dst[t].tensor->span());
            out.pe_sum += pe[i];
        }
    } else {
        for (int i = 0; i < B; ++i) run_backward(i, out.grads);
    }
    return out;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

namespace {

struct AdamState {
    std::vector<std::vector<double>> m, v;
    int64_t step = 0;
};

bool decays(const std::string& name) {
    // weights only; biases, the assignment prior and the temperature do not decay
    return !(name.ends_with("_b") || name == "class_bias" || name == "tau");
}

void adam_step(ModelParams& params, ModelParams& grads, AdamState& state, const OptimConfig& cfg,
               double lr) {
    auto ps = params.named();
    auto gs = grads.named();
    if (state.m.empty()) {
        state.m.resize(ps.size());
        state.v.resize(ps.size());
        for (size_t t = 0; t < ps.size(); ++t) {
            state.m[t].assign(ps[t].tensor->size(), 0.0);
            state.v[t].assign(ps[t].tensor->size(), 0.0);
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t t = 0; t < ps.size(); ++t) {
        auto& p = ps[t].tensor->v;
        const auto& g = gs[t].tensor->v;
        const double wd = decays(ps[t].name) ? cfg.weight_decay : 0.0;
        for (size_t i = 0; i < p.size(); ++i) {
            state.m[t][i] = cfg.beta1 * state.m[t][i] + (1.0 - cfg.beta1) * g[i];
            state.v[t][i] = cfg.beta2 * state.v[t][i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mh = state.m[t][i] / bc1;
            const double vh = state.v[t][i] / bc2;
            p[i] -= lr * (mh / (std::sqrt(vh) + cfg.eps) + wd * p[i]);
        }
    }
}

} // namespace

TrainResult train(const DatasetManifest& manifest, const RoomTaxonomy& taxonomy,
                  const TrainOptions& opts) {
    opts.optim.validate();
    opts.augment.validate();
    if (manifest.entries.empty()) throw std::invalid_argument("train: empty manifest");

    // load the whole (desk-scale) dataset up front
    const size_t n = manifest.entries.size();
    std::vector<Sample> data(n);
    for (size_t i = 0; i < n; ++i) {
        data[i].image = read_rgb_png(manifest.image_path(i));
        data[i].mask = read_mask_png(manifest.mask_path(i));
        std::ifstream pj(manifest.poly_path(i));
        if (!pj) throw std::runtime_error("train: missing poly json for sample " + std::to_string(i));
        std::stringstream buf;
        buf << pj.rdbuf();
        data[i].poly = poly_from_json(buf.str(), taxonomy);
    }

    const bool augment_active = opts.augment.degen_prob > 0 || opts.augment.hflip_prob > 0 ||
                                opts.augment.brightness > 0 || opts.augment.contrast > 0;
    const DegenerationDAG dag = build_dag(taxonomy);

    TrainResult result;
    result.params = ModelParams::init(opts.model, opts.seed, opts.tau_init);
    AdamState state;

    for (int epoch = 0; epoch < opts.optim.epochs; ++epoch) {
        const double lr = opts.optim.cosine_decay
                              ? opts.optim.lr * 0.5 *
                                    (1.0 + std::cos(M_PI * epoch / std::max(1, opts.optim.epochs)))
                              : opts.optim.lr;

        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        CounterRng shuffle_rng(opts.seed, 9000 + static_cast<uint64_t>(epoch));
        for (size_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        double loss_sum = 0.0, pe_sum = 0.0;
        int batches = 0;
        for (size_t start = 0; start < n; start += opts.optim.batch_size) {
            const size_t stop = std::min(n, start + opts.optim.batch_size);
            std::vector<Sample> augmented;
            std::vector<BatchSampleRef> batch;
            augmented.reserve(stop - start);
            for (size_t b = start; b < stop; ++b) {
                const size_t idx = order[b];
                if (augment_active) {
                    CounterRng aug_rng(opts.augment.seed,
                                       static_cast<uint64_t>(epoch) * n + idx);
                    augmented.push_back(
                        augment_sample(data[idx], dag, taxonomy, opts.augment, opts.render, aug_rng));
                } else {
                    augmented.push_back(data[idx]); // shared pixels; cheap relative to training
                }
            }
            for (const auto& s : augmented) batch.push_back({&s.image, &s.mask});

            BatchLoss bl = batch_loss_and_grads(batch, result.params, opts);
            if (!std::isfinite(bl.value))
                throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(batches));
            adam_step(result.params, bl.grads, state, opts.optim, lr);
            loss_sum += bl.value;
            pe_sum += bl.pe_sum;
            ++batches;
        }
        result.log.push_back({epoch, lr, loss_sum / std::max(1, batches),
                              pe_sum / static_cast<double>(n)});
    }
    return result;
}

void write_train_log(const std::vector<EpochStats>& log, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write train log: " + path.string());
    for (const auto& e : log) {
        out << nlohmann::json{{"epoch", e.epoch},
                              {"lr", e.lr},
                              {"mean_loss", e.mean_loss},
                              {"train_pe", e.train_pe}}
                   .dump()
            << "\n";
    }
}

// ---------------------------------------------------------------------------
// end-to-end gradient check
// ---------------------------------------------------------------------------

namespace {

std::vector<double> flatten_params(ModelParams& params) {
    std::vector<double> out;
    for (const auto& nt : params.named()) out.insert(out.end(), nt.tensor->v.begin(), nt.tensor->v.end());
    return out;
}

void unflatten_params(ModelParams& params, std::span<const double> x) {
    size_t off = 0;
    for (auto& nt : params.named()) {
        std::copy(x.begin() + off, x.begin() + off + nt.tensor->size(), nt.tensor->v.begin());
        off += nt.tensor->size();
    }
}

} // namespace

GradCheckEntry gradcheck_model(uint64_t seed, double h, double tol, int coords_per_group,
                               bool inject_bug) {
    const RoomTaxonomy taxonomy = RoomTaxonomy::default_lsun11();
    SynthConfig synth;
    synth.width = 16;
    synth.height = 16;
    synth.seed = seed ^ 0xABCDEF;
    synth.noise_std = 0.05;

    std::vector<Sample> samples;
    for (uint64_t i = 0; i < 2; ++i) {
        Sample s;
        s.poly = sample_layout(synth, taxonomy, i);
        s.mask = rasterize(s.poly);
        s.image = render_image(s.poly, synth, i);
        samples.push_back(std::move(s));
    }
    std::vector<BatchSampleRef> batch;
    for (const auto& s : samples) batch.push_back({&s.image, &s.mask});

    TrainOptions opts;
    ModelParams params = ModelParams::init(opts.model, seed);

    // stratified coordinate choice: every parameter group contributes
    std::vector<int> coords;
    {
        CounterRng rng(seed, 4242);
        size_t off = 0;
        for (const auto& nt : params.named()) {
            const int dim = static_cast<int>(nt.tensor->size());
            for (int c = 0; c < std::min(coords_per_group, dim); ++c)
                coords.push_back(static_cast<int>(off + rng.below(dim)));
            off += nt.tensor->size();
        }
    }

    auto eval = [&](std::span<const double> x) {
        ModelParams p = params;
        unflatten_params(p, x);
        return batch_loss_and_grads(batch, p, opts);
    };
    ValueFn f = [&](std::span<const double> x) { return eval(x).value; };
    GradFn g = [&, inject_bug](std::span<const double> x) {
        BatchLoss bl = eval(x);
        std::vector<double> grad = flatten_params(bl.grads);
        if (inject_bug)
            for (double& v : grad) v *= 2.0;
        return grad;
    };
    return gradcheck_at("model_end_to_end", f, g, flatten_params(params), coords, h, tol);
}

} // namespace lf
