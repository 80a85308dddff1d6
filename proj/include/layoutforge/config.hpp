#pragma once
// One config file for everything the CLI runs. Every field has a default;
// flags override file values.

#include <filesystem>
#include <string>

#include "layoutforge/degen.hpp"
#include "layoutforge/losses.hpp"
#include "layoutforge/model.hpp"
#include "layoutforge/synth.hpp"
#include "layoutforge/train.hpp"

namespace lf {

struct RunConfig {
    uint64_t seed = 0;
    int threads = 1;
    std::string taxonomy; // path to a taxonomy json; empty -> built-in table

    SynthConfig synth;
    AugmentConfig augment;
    LossWeights loss_weights;
    EdgeLossConfig edge;
    ModelConfig model;
    OptimConfig optim;
    double tau_init = 0.07;

    struct Paths {
        std::string train_manifest;
        std::string eval_manifest;
        std::string checkpoint = "checkpoint.lfck";
        std::string out_dir = "dataset";
        std::string train_log = "train_log.jsonl";
        std::string report = "eval_report.json";
    } paths;

    // All randomness descends from one seed: the generator uses it directly,
    // augmentation gets a derived key.
    void apply_seed(uint64_t s);

    TrainOptions train_options() const;
};

RunConfig run_config_from_json(const std::string& text);
RunConfig run_config_from_file(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& cfg);

RoomTaxonomy load_taxonomy(const RunConfig& cfg);

} // namespace lf
