#pragma once
// Deterministic synthetic layout/image generator. Every sample is a pure
// function of (config, sample index): layouts draw from RNG stream 2*index,
// renders from stream 2*index+1.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "layoutforge/core.hpp"
#include "layoutforge/rng.hpp"

namespace lf {

struct SynthConfig {
    int width = 256;
    int height = 256;
    uint64_t seed = 0;
    // type id -> probability; empty means uniform over the taxonomy
    std::map<int, double> type_distribution;
    double noise_std = 0.02;
    double shading_strength = 0.15;

    void validate(const RoomTaxonomy& taxonomy) const; // throws std::invalid_argument
};

// Fixed render palette, label 0..5 -> RGB in [0,1]. Background black, surfaces
// on far-apart RGB cube corners.
extern const double kPalette[kNumClasses][3];

struct ManifestEntry {
    int64_t id = 0;
    std::string image;
    std::string mask;
    std::string poly;
    int room_type = -1;
};

struct DatasetManifest {
    std::filesystem::path dir; // paths in entries are relative to this
    std::vector<ManifestEntry> entries;

    std::filesystem::path image_path(size_t i) const { return dir / entries[i].image; }
    std::filesystem::path mask_path(size_t i) const { return dir / entries[i].mask; }
    std::filesystem::path poly_path(size_t i) const { return dir / entries[i].poly; }
};

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

PolyLayout sample_layout(const SynthConfig& cfg, const RoomTaxonomy& taxonomy, uint64_t index);

// Pixel centers assign labels; centers on shared edges take the lowest
// surface id. Throws when the polygons fail to cover the frame.
LayoutMask rasterize(const PolyLayout& poly);

RgbImage render_image(const PolyLayout& poly, const SynthConfig& cfg, CounterRng& rng);
RgbImage render_image(const PolyLayout& poly, const SynthConfig& cfg, uint64_t index);

DatasetManifest gen_dataset(const SynthConfig& cfg, const RoomTaxonomy& taxonomy, int n,
                            const std::filesystem::path& out_dir, int threads = 1);

} // namespace lf
