#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "layoutforge/model.hpp"
#include "layoutforge/synth.hpp"
#include "layoutforge/train.hpp"

using namespace lf;

namespace {

const RoomTaxonomy kTax = RoomTaxonomy::default_lsun11();

RgbImage make_image(int dim, uint64_t seed, uint64_t index = 0) {
    SynthConfig cfg;
    cfg.width = cfg.height = dim;
    cfg.seed = seed;
    return render_image(sample_layout(cfg, kTax, index), cfg, index);
}

} // namespace

TEST_CASE("embed_task: deterministic hash embedding, order-sensitive average") {
    const ModelConfig cfg;
    const ModelParams params = ModelParams::init(cfg, 1);

    const TaskToken a = embed_task(cfg.task_text, params.token_table);
    const TaskToken b = embed_task(cfg.task_text, params.token_table);
    CHECK(a.embedding == b.embedding);
    CHECK(static_cast<int>(a.embedding.size()) == cfg.embed_dim);
    CHECK(a.rows.size() == 4); // "the task is semantic"
    for (double v : a.embedding) CHECK(std::isfinite(v));

    // direct recomputation of the row average
    std::vector<double> mean(cfg.embed_dim, 0.0);
    for (int row : a.rows)
        for (int k = 0; k < cfg.embed_dim; ++k)
            mean[k] += params.token_table.v[row * cfg.embed_dim + k] / a.rows.size();
    for (int k = 0; k < cfg.embed_dim; ++k)
        CHECK(a.embedding[k] == doctest::Approx(mean[k]).epsilon(1e-12));

    // distinct token multiset -> different embedding; same multiset -> same
    const TaskToken swapped = embed_task("task the is semantic", params.token_table);
    for (int k = 0; k < cfg.embed_dim; ++k)
        CHECK(swapped.embedding[k] == doctest::Approx(a.embedding[k]).epsilon(1e-12));
    const TaskToken other = embed_task("the task is panoptic", params.token_table);
    bool any_diff = false;
    for (int k = 0; k < cfg.embed_dim; ++k) any_diff |= other.embedding[k] != a.embedding[k];
    CHECK(any_diff);

    CHECK_THROWS_AS(embed_task("", params.token_table), std::invalid_argument);
}

TEST_CASE("init_queries: shape, task row, zero offsets") {
    const ModelConfig cfg;
    const ModelParams params = ModelParams::init(cfg, 2);
    const TaskToken task = embed_task(cfg.task_text, params.token_table);

    const Matrix q = init_queries(task, 6, params.query_offsets);
    CHECK(q.rows == 6);
    CHECK(q.cols == cfg.embed_dim);
    for (int k = 0; k < cfg.embed_dim; ++k) CHECK(q.at(5, k) == task.embedding[k]);

    Tensor zero_offsets({5, cfg.embed_dim});
    const Matrix q0 = init_queries(task, 6, zero_offsets);
    for (int n = 0; n < 6; ++n)
        for (int k = 0; k < cfg.embed_dim; ++k) CHECK(q0.at(n, k) == task.embedding[k]);

    CHECK_THROWS_AS(init_queries(task, 1, params.query_offsets), std::invalid_argument);
}

TEST_CASE("encode: pyramid shapes and zero-weight behaviour") {
    const ModelConfig cfg;
    ModelParams params = ModelParams::init(cfg, 3);
    const RgbImage img = make_image(64, 30);

    const FeaturePyramid fp = encode(img, params);
    CHECK(fp.f4.c == cfg.channels);
    CHECK(fp.f4.h == 16);
    CHECK(fp.f4.w == 16);
    CHECK(fp.f8.h == 8);
    CHECK(fp.f8.w == 8);

    for (auto* t : {&params.conv1_w, &params.conv1_b, &params.conv2_w, &params.conv2_b,
                    &params.conv3_w, &params.conv3_b})
        std::fill(t->v.begin(), t->v.end(), 0.0);
    const FeaturePyramid zero = encode(img, params);
    for (double v : zero.f4.v) CHECK(v == 0.0);
    for (double v : zero.f8.v) CHECK(v == 0.0);

    RgbImage odd(60, 60);
    CHECK_THROWS_AS(encode(odd, params), std::invalid_argument);
}

TEST_CASE("forward: per-query mask maps, attention rows normalized, finite everywhere") {
    const ModelConfig cfg;
    const ModelParams params = ModelParams::init(cfg, 4);
    const RgbImage img = make_image(32, 31);

    const ForwardCache fc = forward(img, params);
    CHECK(fc.mask_logits.c == cfg.num_queries);
    CHECK(fc.mask_logits.h == 32);
    CHECK(fc.attn.size() == 2);
    for (const auto& ac : fc.attn)
        for (int n = 0; n < cfg.num_queries; ++n) {
            double s = 0.0;
            for (int p = 0; p < ac.a.cols; ++p) s += ac.a.at(n, p);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
        }

    const size_t npix = fc.pred.probs.plane_size();
    for (size_t p = 0; p < npix; ++p) {
        double s = 0.0;
        for (int k = 0; k < kNumClasses; ++k) s += fc.pred.probs.plane(k)[p];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
    for (double v : fc.pred.probs.v) CHECK(std::isfinite(v));
    for (double v : fc.embeddings.v) CHECK(std::isfinite(v));

    // identity class prior pins query n to class n at initialization
    for (int n = 0; n < cfg.num_queries; ++n) CHECK(fc.pred.assignment[n] == n % kNumClasses);
}

TEST_CASE("predict_masks: hand-built logits follow the hand assignment") {
    // two queries: q0 -> class 2, q1 -> class 2 (max contest), none -> others
    Matrix cls(2, kNumClasses, 0.0);
    cls.at(0, 2) = 3.0;
    cls.at(1, 2) = 2.5;
    GridStack logits(2, 4, 4, 0.0);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            logits.at(0, r, c) = r < 2 ? 2.0 : -2.0;
            logits.at(1, r, c) = r < 2 ? 1.0 : 1.5;
        }

    const MaskPrediction pred = predict_masks(cls, logits, 0.1);
    CHECK(pred.assignment[0] == 2);
    CHECK(pred.assignment[1] == 2);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            const double expect = 1.0 / (1.0 + std::exp(-(r < 2 ? 2.0 : 1.5)));
            CHECK(pred.class_maps[2].at(r, c) == doctest::Approx(expect).epsilon(1e-12));
            CHECK(pred.winner[2][r * 4 + c] == (r < 2 ? 0 : 1));
        }
    // unassigned classes sit at the prior
    for (int k = 0; k < kNumClasses; ++k) {
        if (k == 2) continue;
        for (double v : pred.class_maps[k].v) CHECK(v == 0.1);
    }
}

TEST_CASE("assign_labels: recovery, ties, brute force") {
    CounterRng rng(5);
    LayoutMask mask(4, 4);
    for (auto& l : mask.labels) l = static_cast<uint8_t>(rng.below(kNumClasses));
    GridStack onehot(kNumClasses, 4, 4, 0.0);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) onehot.at(mask.at(r, c), r, c) = 1.0;
    CHECK(assign_labels(onehot) == mask);

    const GridStack uniform(kNumClasses, 4, 4, 1.0 / kNumClasses);
    for (uint8_t l : assign_labels(uniform).labels) CHECK(l == 0);

    GridStack random(kNumClasses, 4, 4);
    for (auto& v : random.v) v = rng.uniform();
    const LayoutMask got = assign_labels(random);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            int best = 0;
            for (int k = 1; k < kNumClasses; ++k)
                if (random.at(k, r, c) > random.at(best, r, c)) best = k;
            CHECK(got.at(r, c) == best);
        }
}

TEST_CASE("infer: deterministic, labels in range") {
    const ModelConfig cfg;
    const ModelParams params = ModelParams::init(cfg, 6);
    const RgbImage img = make_image(32, 33);
    const LayoutMask a = infer(img, params);
    const LayoutMask b = infer(img, params);
    CHECK(a == b);
    for (uint8_t l : a.labels) CHECK(l <= kNumSurfaces);
}

TEST_CASE("checkpoint: byte-stable round trip, corruption detected") {
    const auto dir = std::filesystem::temp_directory_path() / "layoutforge_test_ckpt";
    std::filesystem::create_directories(dir);
    const ModelConfig cfg;
    ModelParams params = ModelParams::init(cfg, 7);
    params.tau.v[0] = 0.123;

    save_checkpoint(dir / "a.lfck", params);
    const ModelParams back = load_checkpoint(dir / "a.lfck");
    auto an = params.named();
    auto bn = const_cast<ModelParams&>(back).named();
    REQUIRE(an.size() == bn.size());
    for (size_t i = 0; i < an.size(); ++i) {
        CHECK(an[i].tensor->shape == bn[i].tensor->shape);
        CHECK(an[i].tensor->v == bn[i].tensor->v);
    }

    save_checkpoint(dir / "b.lfck", params);
    std::ifstream fa(dir / "a.lfck", std::ios::binary), fb(dir / "b.lfck", std::ios::binary);
    const std::string bytes_a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string bytes_b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(bytes_a == bytes_b);

    std::ofstream bad(dir / "bad.lfck", std::ios::binary);
    bad << "NOPE";
    bad.close();
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.lfck"), std::runtime_error);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.lfck"), std::runtime_error);
}

TEST_CASE("gradcheck: full model end to end") {
    const GradCheckEntry entry = gradcheck_model(2024, 1e-5, 1e-3, 10);
    CHECK_MESSAGE(entry.pass, "max_rel_err=", entry.max_rel_err, " at coord ", entry.worst_index,
                  " analytic=", entry.worst_analytic, " numeric=", entry.worst_numeric);
    CHECK(entry.checked >= 100);

    // negative control: a corrupted gradient must not pass
    CHECK_FALSE(gradcheck_model(2024, 1e-5, 1e-3, 4, true).pass);
}
