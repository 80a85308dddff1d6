#include "layoutforge/synth.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "layoutforge/image.hpp"

namespace lf {

const double kPalette[kNumClasses][3] = {
    {0, 0, 0}, // background
    {0, 0, 1}, // ceiling
    {0, 1, 0}, // floor
    {1, 0, 0}, // left wall
    {1, 1, 0}, // right wall
    {1, 0, 1}, // front wall
};

void SynthConfig::validate(const RoomTaxonomy& taxonomy) const {
    if (width < 16 || height < 16) throw std::invalid_argument("synth: dimensions must be >= 16");
    if (noise_std < 0.0 || noise_std > 1.0) throw std::invalid_argument("synth: noise_std out of [0,1]");
    if (shading_strength < 0.0) throw std::invalid_argument("synth: shading_strength < 0");
    if (!type_distribution.empty()) {
        double total = 0.0;
        for (const auto& [id, p] : type_distribution) {
            if (p < 0.0) throw std::invalid_argument("synth: negative type probability");
            if (!taxonomy.find(id))
                throw std::invalid_argument("synth: unknown type id " + std::to_string(id));
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw std::invalid_argument("synth: type probabilities must sum to 1");
    }
}

namespace {

// All generated coordinates land on the 1/256-px lattice so that mirror and
// degeneration arithmetic stays exact in f64.
double quantize(double v) { return std::round(v * 256.0) / 256.0; }

double in_lo(CounterRng& rng, double dim) { return quantize(rng.uniform(0.10, 0.42) * dim); }
double in_hi(CounterRng& rng, double dim) { return quantize(rng.uniform(0.58, 0.90) * dim); }
double in_mid(CounterRng& rng, double dim) { return quantize(rng.uniform(0.25, 0.75) * dim); }
double out_lo(CounterRng& rng, double dim) { return quantize(-rng.uniform(0.05, 0.30) * dim); }
double out_hi(CounterRng& rng, double dim) { return quantize((1.0 + rng.uniform(0.05, 0.30)) * dim); }

int sample_type(const SynthConfig& cfg, const RoomTaxonomy& taxonomy, CounterRng& rng) {
    std::vector<int> ids;
    std::vector<double> probs;
    if (cfg.type_distribution.empty()) {
        for (const auto& t : taxonomy.types) ids.push_back(t.id);
        std::sort(ids.begin(), ids.end());
        probs.assign(ids.size(), 1.0 / static_cast<double>(ids.size()));
    } else {
        for (const auto& [id, p] : cfg.type_distribution) { // std::map iterates in id order
            ids.push_back(id);
            probs.push_back(p);
        }
    }
    return ids[rng.categorical(probs)];
}

} // namespace

PolyLayout sample_layout(const SynthConfig& cfg, const RoomTaxonomy& taxonomy, uint64_t index) {
    cfg.validate(taxonomy);
    CounterRng rng(cfg.seed, 2 * index);
    const int type_id = sample_type(cfg, taxonomy, rng);
    const SurfaceSet set = taxonomy.find(type_id)->surfaces;
    const double W = cfg.width, H = cfg.height;

    BackRect rect;
    if (set.contains(Surface::front_wall)) {
        rect.x0 = set.contains(Surface::left_wall) ? in_lo(rng, W) : out_lo(rng, W);
        rect.x1 = set.contains(Surface::right_wall) ? in_hi(rng, W) : out_hi(rng, W);
        rect.y0 = set.contains(Surface::ceiling) ? in_lo(rng, H) : out_lo(rng, H);
        rect.y1 = set.contains(Surface::floor) ? in_hi(rng, H) : out_hi(rng, H);
    } else {
        rect.collapsed = true;
        const bool l = set.contains(Surface::left_wall), r = set.contains(Surface::right_wall);
        rect.x0 = (l && r) ? in_mid(rng, W) : (l ? out_hi(rng, W) : out_lo(rng, W));
        const bool c = set.contains(Surface::ceiling), f = set.contains(Surface::floor);
        rect.y0 = (c && f) ? in_mid(rng, H) : (c ? out_hi(rng, H) : out_lo(rng, H));
        rect.x1 = rect.x0;
        rect.y1 = rect.y0;
    }
    return build_poly_layout(cfg.width, cfg.height, type_id, rect, taxonomy);
}

namespace {

// Inclusive convex containment; zero-length edges (collapsed rects) ignored.
bool poly_contains(const std::vector<Vec2>& verts, double px, double py) {
    constexpr double kEps = 1e-12;
    bool pos = false, neg = false;
    const size_t n = verts.size();
    for (size_t i = 0; i < n; ++i) {
        const Vec2& a = verts[i];
        const Vec2& b = verts[(i + 1) % n];
        const double cross = (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
        if (cross > kEps) pos = true;
        else if (cross < -kEps) neg = true;
        if (pos && neg) return false;
    }
    return true;
}

} // namespace

LayoutMask rasterize(const PolyLayout& poly) {
    LayoutMask mask(poly.height, poly.width);
    for (int r = 0; r < poly.height; ++r) {
        const double py = r + 0.5;
        for (int c = 0; c < poly.width; ++c) {
            const double px = c + 0.5;
            uint8_t label = 0;
            for (const auto& sp : poly.surfaces) { // ascending surface id: lowest wins ties
                if (poly_contains(sp.verts, px, py)) {
                    label = static_cast<uint8_t>(sp.surface);
                    break;
                }
            }
            if (label == 0)
                throw std::runtime_error("rasterize: polygons do not cover pixel (" +
                                         std::to_string(r) + "," + std::to_string(c) + ")");
            mask.at(r, c) = label;
        }
    }
    return mask;
}

RgbImage render_image(const PolyLayout& poly, const SynthConfig& cfg, CounterRng& rng) {
    const LayoutMask mask = rasterize(poly);
    RgbImage img(poly.height, poly.width);
    for (int r = 0; r < poly.height; ++r) {
        const double shade = 1.0 + cfg.shading_strength * (0.5 - (r + 0.5) / poly.height);
        for (int c = 0; c < poly.width; ++c) {
            const uint8_t label = mask.at(r, c);
            for (int ch = 0; ch < 3; ++ch) {
                double v = kPalette[label][ch] * shade;
                if (cfg.noise_std > 0.0) v += cfg.noise_std * rng.gaussian();
                img.at(ch, r, c) = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    return img;
}

RgbImage render_image(const PolyLayout& poly, const SynthConfig& cfg, uint64_t index) {
    CounterRng rng(cfg.seed, 2 * index + 1);
    return render_image(poly, cfg, rng);
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
    for (const auto& e : manifest.entries) {
        nlohmann::json j = {{"id", e.id},
                            {"image", e.image},
                            {"mask", e.mask},
                            {"poly", e.poly},
                            {"room_type", e.room_type}};
        out << j.dump() << "\n";
    }
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read manifest: " + path.string());
    DatasetManifest m;
    m.dir = path.parent_path();
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const nlohmann::json j = nlohmann::json::parse(line);
        m.entries.push_back({j.at("id").get<int64_t>(), j.at("image").get<std::string>(),
                             j.at("mask").get<std::string>(), j.at("poly").get<std::string>(),
                             j.at("room_type").get<int>()});
    }
    return m;
}

DatasetManifest gen_dataset(const SynthConfig& cfg, const RoomTaxonomy& taxonomy, int n,
                            const std::filesystem::path& out_dir, int threads) {
    cfg.validate(taxonomy);
    std::filesystem::create_directories(out_dir);

    DatasetManifest manifest;
    manifest.dir = out_dir;
    manifest.entries.resize(n);

    auto make_sample = [&](int i) {
        char name[64];
        std::snprintf(name, sizeof(name), "sample_%06d", i);
        const PolyLayout poly = sample_layout(cfg, taxonomy, i);
        const LayoutMask mask = rasterize(poly);
        const RgbImage img = render_image(poly, cfg, static_cast<uint64_t>(i));

        ManifestEntry e;
        e.id = i;
        e.image = std::string(name) + ".png";
        e.mask = std::string(name) + "_mask.png";
        e.poly = std::string(name) + "_poly.json";
        e.room_type = poly.room_type;
        write_rgb_png(out_dir / e.image, img);
        write_mask_png(out_dir / e.mask, mask);
        std::ofstream pj(out_dir / e.poly);
        if (!pj) throw std::runtime_error("cannot write poly json");
        pj << poly_to_json(poly) << "\n";
        manifest.entries[i] = e;
    };

    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) make_sample(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        std::atomic<bool> failed{false};
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (int i = next.fetch_add(1); i < n && !failed; i = next.fetch_add(1)) {
                    try {
                        make_sample(i);
                    } catch (...) {
                        failed = true;
                    }
                }
            });
        for (auto& t : pool) t.join();
        if (failed) throw std::runtime_error("gen_dataset: sample generation failed");
    }

    save_manifest(manifest, out_dir / "manifest.jsonl");
    return manifest;
}

} // namespace lf
