#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "layoutforge/core.hpp"
#include "layoutforge/image.hpp"
#include "layoutforge/losses.hpp"
#include "layoutforge/model.hpp"
#include "layoutforge/synth.hpp"

using namespace lf;

namespace {

struct CliResult {
    int code = -1;
    std::string output;
};

std::string cli_path() {
    const char* p = std::getenv("LAYOUTFORGE_BIN");
    REQUIRE_MESSAGE(p, "LAYOUTFORGE_BIN must point at the CLI binary");
    return p;
}

CliResult run_cli(const std::string& args) {
    const std::string cmd = cli_path() + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe);
    CliResult result;
    char buf[4096];
    while (size_t n = fread(buf, 1, sizeof(buf), pipe)) result.output.append(buf, n);
    const int status = pclose(pipe);
    result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("layoutforge_cli_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p);
    REQUIRE(out);
    out << text;
}

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE_MESSAGE(in, "missing file ", p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const RoomTaxonomy kTax = RoomTaxonomy::default_lsun11();

} // namespace

TEST_CASE("cli synth: exit codes and sample files") {
    const auto dir = temp_dir("synth");
    const auto cfg = dir / "cfg.json";
    write_file(cfg, R"({"seed": 5, "synth": {"width": 32, "height": 32}})");

    const CliResult ok = run_cli("--config " + cfg.string() + " synth --n 5 --out " +
                                 (dir / "data").string());
    CHECK(ok.code == 0);
    const DatasetManifest manifest = load_manifest(dir / "data" / "manifest.jsonl");
    REQUIRE(manifest.entries.size() == 5);
    for (size_t i = 0; i < 5; ++i)
        CHECK(validate_layout(read_mask_png(manifest.mask_path(i)), kTax).valid());

    write_file(cfg, "{broken");
    const CliResult bad = run_cli("--config " + cfg.string() + " synth --n 1 --out " +
                                  (dir / "x").string());
    CHECK(bad.code == 2);
    CHECK(bad.output.find("config error") != std::string::npos);
}

TEST_CASE("cli synth: byte-identical regeneration for one seed") {
    const auto dir = temp_dir("synth_det");
    for (const char* tag : {"a", "b"}) {
        const CliResult r =
            run_cli("--seed 9 synth --n 3 --out " + (dir / tag).string());
        REQUIRE(r.code == 0);
    }
    for (int i = 0; i < 3; ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "sample_%06d.png", i);
        CHECK(file_bytes(dir / "a" / name) == file_bytes(dir / "b" / name));
    }
    CHECK(file_bytes(dir / "a" / "manifest.jsonl") == file_bytes(dir / "b" / "manifest.jsonl"));
}

TEST_CASE("cli train/eval: end-to-end plumbing on a tiny set") {
    const auto dir = temp_dir("train2");
    const auto cfg = dir / "cfg.json";
    const auto data = dir / "data";
    write_file(cfg, R"({"seed": 7, "synth": {"width": 16, "height": 16}})");
    REQUIRE(run_cli("--config " + cfg.string() + " synth --n 6 --out " + data.string()).code == 0);

    auto train_cfg = [&](const std::string& ck, int epochs) {
        std::ostringstream os;
        os << R"({"seed": 7, "synth": {"width": 16, "height": 16},)"
           << R"("model": {"channels": 8, "embed_dim": 8, "vocab_size": 32},)"
           << R"("augment": {"degen_prob": 0, "hflip_prob": 0, "brightness": 0, "contrast": 0},)"
           << R"("optim": {"epochs": )" << epochs << R"(, "lr": 0.001, "batch_size": 3},)"
           << R"("paths": {"train_manifest": ")" << (data / "manifest.jsonl").string()
           << R"(", "eval_manifest": ")" << (data / "manifest.jsonl").string()
           << R"(", "checkpoint": ")" << ck << R"(", "train_log": ")" << (dir / "log.jsonl").string()
           << R"(", "report": ")" << (dir / "report.json").string() << R"("}})";
        return os.str();
    };

    // epochs=0: checkpoint equals the seeded initialization
    write_file(cfg, train_cfg((dir / "ck0").string(), 0));
    REQUIRE(run_cli("--config " + cfg.string() + " train").code == 0);
    const ModelParams loaded = load_checkpoint(dir / "ck0");
    ModelConfig mc;
    mc.channels = 8;
    mc.embed_dim = 8;
    mc.vocab_size = 32;
    ModelParams expect = ModelParams::init(mc, 7);
    auto en = expect.named();
    auto ln = const_cast<ModelParams&>(loaded).named();
    for (size_t i = 0; i < en.size(); ++i) CHECK(en[i].tensor->v == ln[i].tensor->v);

    // two runs, same seed: byte-identical checkpoints, log parses
    write_file(cfg, train_cfg((dir / "ck_a").string(), 2));
    REQUIRE(run_cli("--config " + cfg.string() + " train").code == 0);
    write_file(cfg, train_cfg((dir / "ck_b").string(), 2));
    REQUIRE(run_cli("--config " + cfg.string() + " train").code == 0);
    CHECK(file_bytes(dir / "ck_a") == file_bytes(dir / "ck_b"));
    std::ifstream log(dir / "log.jsonl");
    std::string line;
    int rows = 0;
    while (std::getline(log, line))
        if (!line.empty()) {
            const auto j = nlohmann::json::parse(line);
            CHECK(std::isfinite(j.at("mean_loss").get<double>()));
            ++rows;
        }
    CHECK(rows == 2);

    // eval with the trained checkpoint writes a parsing report
    write_file(cfg, train_cfg((dir / "ck_a").string(), 2));
    const CliResult ev = run_cli("--config " + cfg.string() + " eval");
    CHECK(ev.code == 0);
    const auto report = nlohmann::json::parse(file_bytes(dir / "report.json"));
    CHECK(report.at("aggregate").at("evaluated").get<int>() == 6);
    // summary table echoes the aggregate
    const double pe = report.at("aggregate").at("pe").get<double>();
    char pe_str[32];
    std::snprintf(pe_str, sizeof(pe_str), "%.4f", pe);
    CHECK(ev.output.find(pe_str) != std::string::npos);

    // self-eval: ground truth against itself is perfect
    const CliResult self = run_cli("--config " + cfg.string() + " eval --self-eval");
    CHECK(self.code == 0);
    const auto self_report = nlohmann::json::parse(file_bytes(dir / "report.json"));
    CHECK(self_report.at("aggregate").at("pa").get<double>() == 100.0);
    CHECK(self_report.at("aggregate").at("pe").get<double>() == 0.0);
    CHECK(self_report.at("aggregate").at("e_cor").get<double>() == 0.0);

    // missing checkpoint is an IO failure
    const CliResult missing = run_cli("--config " + cfg.string() +
                                      " eval --checkpoint /nonexistent/ck");
    CHECK(missing.code == 3);
}

TEST_CASE("cli gradcheck: passes by default, fails with the injected bug") {
    const auto dir = temp_dir("gradcheck");
    const CliResult ok = run_cli("--seed 3 gradcheck --report " + (dir / "gc.json").string());
    CHECK(ok.code == 0);
    for (const char* kernel :
         {"ce", "dice", "bce", "surface", "edge", "smoothness", "geo", "contrastive", "total",
          "model_end_to_end"})
        CHECK_MESSAGE(ok.output.find(kernel) != std::string::npos, "missing kernel ", kernel);
    const auto report = nlohmann::json::parse(file_bytes(dir / "gc.json"));
    CHECK(report.at("all_pass").get<bool>());
    CHECK(report.at("kernels").size() == 10);

    const CliResult bug = run_cli("--seed 3 gradcheck --inject-bug smoothness");
    CHECK(bug.code == 5);
    CHECK(bug.output.find("FAIL") != std::string::npos);
}

TEST_CASE("cli render: palette bytes are stable, edges overlay the boundary map") {
    const auto dir = temp_dir("render");
    SynthConfig sc;
    sc.width = sc.height = 32;
    sc.seed = 15;
    const PolyLayout poly = sample_layout(sc, kTax, 0);
    const LayoutMask mask = rasterize(poly);
    write_mask_png(dir / "mask.png", mask);

    REQUIRE(run_cli("render --in " + (dir / "mask.png").string() + " --out " +
                    (dir / "a.png").string())
                .code == 0);
    REQUIRE(run_cli("render --in " + (dir / "mask.png").string() + " --out " +
                    (dir / "b.png").string())
                .code == 0);
    CHECK(file_bytes(dir / "a.png") == file_bytes(dir / "b.png"));

    const RgbImage rendered = read_rgb_png(dir / "a.png");
    for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c)
            if (mask.at(r, c) == 2) {
                CHECK(rendered.at(0, r, c) == 0.0);
                CHECK(rendered.at(1, r, c) == 1.0);
                CHECK(rendered.at(2, r, c) == 0.0);
            }

    REQUIRE(run_cli("render --in " + (dir / "mask.png").string() + " --out " +
                    (dir / "e.png").string() + " --edges")
                .code == 0);
    const RgbImage overlaid = read_rgb_png(dir / "e.png");
    const Grid edge = gt_edge_map(mask, EdgeLossConfig{});
    for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c)
            if (edge.at(r, c) == 1.0)
                for (int ch = 0; ch < 3; ++ch) CHECK(overlaid.at(ch, r, c) == 1.0);

    CHECK(run_cli("render --in /nonexistent.png --out " + (dir / "x.png").string()).code == 3);
}

TEST_CASE("cli degen-preview: identity, removal, child validity") {
    const auto dir = temp_dir("degen");
    SynthConfig sc;
    sc.width = sc.height = 32;
    sc.seed = 16;
    sc.type_distribution = {{0, 1.0}};
    const PolyLayout poly = sample_layout(sc, kTax, 0);
    write_file(dir / "poly.json", poly_to_json(poly));
    const auto cfg = dir / "cfg.json";
    write_file(cfg, R"({"seed": 16, "synth": {"width": 32, "height": 32}})");

    const std::string base = "--config " + cfg.string() + " degen-preview --poly " +
                             (dir / "poly.json").string() + " --out ";
    REQUIRE(run_cli(base + (dir / "id").string() + " --remove none").code == 0);
    CHECK(file_bytes(dir / "id_before.png") == file_bytes(dir / "id_after.png"));

    REQUIRE(run_cli(base + (dir / "c").string() + " --remove ceiling").code == 0);
    const LayoutMask after = read_mask_png(dir / "c_after_mask.png");
    CHECK(std::count(after.labels.begin(), after.labels.end(), 1) == 0);
    const ValidationReport vr = validate_layout(after, kTax);
    CHECK(vr.valid());
    CHECK(vr.matched_type == 1);
    const RgbImage after_img = read_rgb_png(dir / "c_after.png");
    for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c) {
            // ceiling palette is pure blue; nothing should stay saturated blue
            const bool pure_blue = after_img.at(2, r, c) > 0.9 && after_img.at(0, r, c) < 0.1 &&
                                   after_img.at(1, r, c) < 0.1;
            CHECK_FALSE(pure_blue);
        }

    // front-wall removal from type 0 leads outside the taxonomy edge set
    CHECK(run_cli(base + (dir / "x").string() + " --remove no-such-surface").code == 2);
}
