// Single-binary CLI: dataset generation, augmentation preview, training,
// evaluation, gradient checking and PNG rendering.
//
// Exit codes: 0 success, 2 config/usage, 3 IO, 4 numerical divergence,
// 5 gradcheck failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "layoutforge/config.hpp"
#include "layoutforge/degen.hpp"
#include "layoutforge/gradcheck.hpp"
#include "layoutforge/image.hpp"
#include "layoutforge/metrics.hpp"
#include "layoutforge/model.hpp"
#include "layoutforge/synth.hpp"
#include "layoutforge/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitDiverged = 4;
constexpr int kExitGradcheck = 5;

bool log_enabled() {
    const char* level = std::getenv("LAYOUTFORGE_LOG");
    return level && std::string_view(level) != "quiet";
}

void log_line(const std::string& msg) {
    if (log_enabled()) std::cerr << msg << "\n";
}

lf::PolyLayout load_poly(const std::filesystem::path& path, const lf::RoomTaxonomy& taxonomy) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open poly json: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return lf::poly_from_json(buf.str(), taxonomy);
}

lf::RgbImage palette_render(const lf::LayoutMask& mask, const lf::Grid* edge_overlay) {
    lf::RgbImage img(mask.h, mask.w);
    for (int r = 0; r < mask.h; ++r)
        for (int c = 0; c < mask.w; ++c) {
            const uint8_t label = mask.at(r, c) <= lf::kNumSurfaces ? mask.at(r, c) : 0;
            for (int ch = 0; ch < 3; ++ch) img.at(ch, r, c) = lf::kPalette[label][ch];
            if (edge_overlay && edge_overlay->at(r, c) == 1.0)
                for (int ch = 0; ch < 3; ++ch) img.at(ch, r, c) = 1.0;
        }
    return img;
}

int cmd_synth(const lf::RunConfig& cfg, int n) {
    const lf::RoomTaxonomy taxonomy = lf::load_taxonomy(cfg);
    cfg.synth.validate(taxonomy);
    const auto manifest = lf::gen_dataset(cfg.synth, taxonomy, n, cfg.paths.out_dir, cfg.threads);
    log_line("wrote " + std::to_string(manifest.entries.size()) + " samples to " +
             cfg.paths.out_dir);
    return kExitOk;
}

int cmd_train(const lf::RunConfig& cfg) {
    if (cfg.paths.train_manifest.empty())
        throw std::invalid_argument("train: paths.train_manifest not set");
    const lf::RoomTaxonomy taxonomy = lf::load_taxonomy(cfg);
    const auto manifest = lf::load_manifest(cfg.paths.train_manifest);

    lf::TrainResult result = lf::train(manifest, taxonomy, cfg.train_options());
    lf::save_checkpoint(cfg.paths.checkpoint, result.params);
    lf::write_train_log(result.log, cfg.paths.train_log);
    if (!result.log.empty())
        log_line("final epoch loss " + std::to_string(result.log.back().mean_loss) + ", train PE " +
                 std::to_string(result.log.back().train_pe) + "%");
    return kExitOk;
}

int cmd_eval(const lf::RunConfig& cfg, bool self_eval) {
    if (cfg.paths.eval_manifest.empty())
        throw std::invalid_argument("eval: paths.eval_manifest not set");
    const lf::RoomTaxonomy taxonomy = lf::load_taxonomy(cfg);
    const auto manifest = lf::load_manifest(cfg.paths.eval_manifest);

    lf::InferFn infer;
    lf::ModelParams params;
    if (self_eval) {
        infer = [](const lf::EvalSampleInput& in) { return in.gt_mask; };
    } else {
        params = lf::load_checkpoint(cfg.paths.checkpoint);
        infer = [&params](const lf::EvalSampleInput& in) { return lf::infer(in.image, params); };
    }

    const lf::EvalReport report =
        lf::evaluate(manifest, infer, taxonomy, cfg.threads,
                     self_eval ? lf::CornerReference::extracted_gt : lf::CornerReference::poly);
    std::ofstream out(cfg.paths.report);
    if (!out) throw std::runtime_error("cannot write report: " + cfg.paths.report);
    out << report.to_json() << "\n";
    std::cout << report.summary_table();
    return kExitOk;
}

int cmd_gradcheck(const lf::RunConfig& cfg, const std::string& inject_bug,
                  const std::string& report_path) {
    lf::CheckReport report = lf::gradcheck_losses(cfg.seed, 1e-5, 1e-4, inject_bug);
    report.entries.push_back(
        lf::gradcheck_model(cfg.seed, 1e-5, 1e-3, 12, inject_bug == "model"));
    std::cout << report.summary();
    if (!report_path.empty()) {
        std::ofstream out(report_path);
        if (!out) throw std::runtime_error("cannot write gradcheck report: " + report_path);
        out << report.to_json() << "\n";
    }
    if (!report.all_pass()) {
        for (const auto& e : report.entries)
            if (!e.pass)
                std::cout << "worst: " << e.name << " coord " << e.worst_index << " analytic "
                          << e.worst_analytic << " numeric " << e.worst_numeric << "\n";
        return kExitGradcheck;
    }
    return kExitOk;
}

int cmd_render(const lf::RunConfig& cfg, const std::string& input, const std::string& output,
               bool edges) {
    const lf::RoomTaxonomy taxonomy = lf::load_taxonomy(cfg);
    lf::LayoutMask mask;
    if (input.ends_with(".json")) {
        mask = lf::rasterize(load_poly(input, taxonomy));
    } else {
        mask = lf::read_mask_png(input);
    }
    lf::Grid edge_map;
    if (edges) edge_map = lf::gt_edge_map(mask, cfg.edge);
    lf::write_rgb_png(output, palette_render(mask, edges ? &edge_map : nullptr));
    return kExitOk;
}

int cmd_degen_preview(const lf::RunConfig& cfg, const std::string& poly_path,
                      const std::string& remove, const std::string& out_prefix) {
    const lf::RoomTaxonomy taxonomy = lf::load_taxonomy(cfg);
    const lf::PolyLayout before = load_poly(poly_path, taxonomy);

    lf::DagEdge edge{before.room_type, before.room_type, lf::Surface::ceiling};
    if (remove != "none") {
        const auto surface = lf::surface_from_name(remove);
        if (!surface) throw std::invalid_argument("degen-preview: unknown surface " + remove);
        bool found = false;
        for (const auto& e : lf::build_dag(taxonomy).edges_from(before.room_type))
            if (e.removed == *surface) {
                edge = e;
                found = true;
                break;
            }
        if (!found)
            throw std::invalid_argument("degen-preview: no degeneration edge removes " + remove +
                                        " from type " + std::to_string(before.room_type));
    }

    lf::CounterRng rng(cfg.seed, 11);
    const lf::PolyLayout after = lf::degenerate(before, edge, taxonomy, rng);
    const lf::LayoutMask mask_before = lf::rasterize(before);
    const lf::LayoutMask mask_after = lf::rasterize(after);

    lf::CounterRng render_rng_a(cfg.seed, 12), render_rng_b(cfg.seed, 12);
    lf::write_rgb_png(out_prefix + "_before.png", lf::render_image(before, cfg.synth, render_rng_a));
    lf::write_rgb_png(out_prefix + "_after.png", lf::render_image(after, cfg.synth, render_rng_b));
    lf::write_mask_png(out_prefix + "_before_mask.png", mask_before);
    lf::write_mask_png(out_prefix + "_after_mask.png", mask_after);
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"layoutforge: synthetic Manhattan room-layout learning toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    uint64_t seed_flag = 0;
    bool seed_set = false;
    int threads_flag = 0;
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--seed", seed_flag, "override the config seed")->each([&](const std::string&) {
        seed_set = true;
    });
    app.add_option("--threads", threads_flag, "worker threads (default 1, reproducible)");

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    int synth_n = 10;
    std::string synth_out;
    synth->add_option("--n", synth_n, "sample count");
    synth->add_option("--out", synth_out, "output directory");

    auto* train = app.add_subcommand("train", "train the segmenter");
    std::string train_manifest, train_ckpt, train_log;
    train->add_option("--manifest", train_manifest, "training manifest");
    train->add_option("--out", train_ckpt, "checkpoint path");
    train->add_option("--log", train_log, "epoch log path");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_manifest, eval_ckpt, eval_report;
    bool self_eval = false;
    eval->add_option("--manifest", eval_manifest, "evaluation manifest");
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint path");
    eval->add_option("--report", eval_report, "report json path");
    eval->add_flag("--self-eval", self_eval, "score ground truth against itself");

    auto* gradcheck = app.add_subcommand("gradcheck", "verify analytic gradients");
    std::string gc_report, gc_inject;
    gradcheck->add_option("--report", gc_report, "report json path");
    gradcheck->add_option("--inject-bug", gc_inject, "scale one kernel's gradient by 2 (test hook)")
        ->group(""); // hidden
    gradcheck->add_option("--out", gc_report, "alias of --report");

    auto* render = app.add_subcommand("render", "render a mask or layout to RGB");
    std::string render_in, render_out;
    bool render_edges = false;
    render->add_option("--in", render_in, "mask png or poly json")->required();
    render->add_option("--out", render_out, "output png")->required();
    render->add_flag("--edges", render_edges, "overlay the boundary map");

    auto* degen = app.add_subcommand("degen-preview", "write before/after degeneration pairs");
    std::string degen_poly, degen_remove = "none", degen_out = "degen";
    degen->add_option("--poly", degen_poly, "input poly json")->required();
    degen->add_option("--remove", degen_remove, "surface name or 'none'");
    degen->add_option("--out", degen_out, "output prefix");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return kExitConfig;
    }

    try {
        lf::RunConfig cfg;
        if (!config_path.empty()) cfg = lf::run_config_from_file(config_path);
        if (seed_set) cfg.apply_seed(seed_flag);
        if (threads_flag > 0) cfg.threads = threads_flag;
        if (!synth_out.empty()) cfg.paths.out_dir = synth_out;
        if (!train_manifest.empty()) cfg.paths.train_manifest = train_manifest;
        if (!train_ckpt.empty()) cfg.paths.checkpoint = train_ckpt;
        if (!train_log.empty()) cfg.paths.train_log = train_log;
        if (!eval_manifest.empty()) cfg.paths.eval_manifest = eval_manifest;
        if (!eval_ckpt.empty()) cfg.paths.checkpoint = eval_ckpt;
        if (!eval_report.empty()) cfg.paths.report = eval_report;

        if (*synth) return cmd_synth(cfg, synth_n);
        if (*train) return cmd_train(cfg);
        if (*eval) return cmd_eval(cfg, self_eval);
        if (*gradcheck) return cmd_gradcheck(cfg, gc_inject, gc_report);
        if (*render) return cmd_render(cfg, render_in, render_out, render_edges);
        if (*degen) return cmd_degen_preview(cfg, degen_poly, degen_remove, degen_out);
        return kExitConfig;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::runtime_error& e) {
        const std::string what = e.what();
        if (what.find("non-finite") != std::string::npos) {
            std::cerr << "diverged: " << what << "\n";
            return kExitDiverged;
        }
        std::cerr << "io error: " << what << "\n";
        return kExitIo;
    }
}
