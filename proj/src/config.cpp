#include "layoutforge/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace lf {

using nlohmann::json;

void RunConfig::apply_seed(uint64_t s) {
    seed = s;
    synth.seed = s;
    augment.seed = s ^ 0x9E3779B97F4A7C15ull;
}

TrainOptions RunConfig::train_options() const {
    TrainOptions opts;
    opts.model = model;
    opts.optim = optim;
    opts.loss_weights = loss_weights;
    opts.edge = edge;
    opts.augment = augment;
    opts.render = synth;
    opts.tau_init = tau_init;
    opts.seed = seed;
    opts.threads = threads;
    return opts;
}

RunConfig run_config_from_json(const std::string& text) {
    const json j = json::parse(text);
    RunConfig cfg;
    cfg.seed = j.value("seed", cfg.seed);
    cfg.threads = j.value("threads", cfg.threads);
    cfg.taxonomy = j.value("taxonomy", cfg.taxonomy);

    if (j.contains("synth")) {
        const json& s = j["synth"];
        cfg.synth.width = s.value("width", cfg.synth.width);
        cfg.synth.height = s.value("height", cfg.synth.height);
        cfg.synth.noise_std = s.value("noise_std", cfg.synth.noise_std);
        cfg.synth.shading_strength = s.value("shading_strength", cfg.synth.shading_strength);
        if (s.contains("type_distribution"))
            for (const auto& [key, val] : s["type_distribution"].items())
                cfg.synth.type_distribution[std::stoi(key)] = val.get<double>();
    }
    if (j.contains("augment")) {
        const json& a = j["augment"];
        cfg.augment.brightness = a.value("brightness", cfg.augment.brightness);
        cfg.augment.contrast = a.value("contrast", cfg.augment.contrast);
        cfg.augment.hflip_prob = a.value("hflip_prob", cfg.augment.hflip_prob);
        cfg.augment.degen_prob = a.value("degen_prob", cfg.augment.degen_prob);
    }
    if (j.contains("loss_weights")) {
        const json& w = j["loss_weights"];
        cfg.loss_weights.l1 = w.value("lambda1", cfg.loss_weights.l1);
        cfg.loss_weights.l2 = w.value("lambda2", cfg.loss_weights.l2);
        cfg.loss_weights.l3 = w.value("lambda3", cfg.loss_weights.l3);
        cfg.loss_weights.l4 = w.value("lambda4", cfg.loss_weights.l4);
        cfg.loss_weights.l5 = w.value("lambda5", cfg.loss_weights.l5);
    }
    if (j.contains("edge")) {
        const json& e = j["edge"];
        cfg.edge.sigma = e.value("sigma", cfg.edge.sigma);
        cfg.edge.gt_dilation = e.value("gt_dilation", cfg.edge.gt_dilation);
        cfg.edge.clamp_eps = e.value("clamp_eps", cfg.edge.clamp_eps);
    }
    if (j.contains("contrastive")) cfg.tau_init = j["contrastive"].value("tau_init", cfg.tau_init);
    if (j.contains("model")) {
        const json& m = j["model"];
        cfg.model.channels = m.value("channels", cfg.model.channels);
        cfg.model.embed_dim = m.value("embed_dim", cfg.model.embed_dim);
        cfg.model.num_queries = m.value("num_queries", cfg.model.num_queries);
        cfg.model.decoder_layers = m.value("decoder_layers", cfg.model.decoder_layers);
        cfg.model.vocab_size = m.value("vocab_size", cfg.model.vocab_size);
        cfg.model.bg_prior = m.value("bg_prior", cfg.model.bg_prior);
        cfg.model.class_bias_init = m.value("class_bias_init", cfg.model.class_bias_init);
        cfg.model.task_text = m.value("task_text", cfg.model.task_text);
    }
    if (j.contains("optim")) {
        const json& o = j["optim"];
        cfg.optim.lr = o.value("lr", cfg.optim.lr);
        cfg.optim.beta1 = o.value("beta1", cfg.optim.beta1);
        cfg.optim.beta2 = o.value("beta2", cfg.optim.beta2);
        cfg.optim.eps = o.value("eps", cfg.optim.eps);
        cfg.optim.weight_decay = o.value("weight_decay", cfg.optim.weight_decay);
        cfg.optim.epochs = o.value("epochs", cfg.optim.epochs);
        cfg.optim.batch_size = o.value("batch_size", cfg.optim.batch_size);
        cfg.optim.cosine_decay = o.value("cosine_decay", cfg.optim.cosine_decay);
    }
    if (j.contains("paths")) {
        const json& p = j["paths"];
        cfg.paths.train_manifest = p.value("train_manifest", cfg.paths.train_manifest);
        cfg.paths.eval_manifest = p.value("eval_manifest", cfg.paths.eval_manifest);
        cfg.paths.checkpoint = p.value("checkpoint", cfg.paths.checkpoint);
        cfg.paths.out_dir = p.value("out_dir", cfg.paths.out_dir);
        cfg.paths.train_log = p.value("train_log", cfg.paths.train_log);
        cfg.paths.report = p.value("report", cfg.paths.report);
    }
    cfg.apply_seed(cfg.seed);
    return cfg;
}

RunConfig run_config_from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return run_config_from_json(buf.str());
}

std::string run_config_to_json(const RunConfig& cfg) {
    json dist = json::object();
    for (const auto& [id, p] : cfg.synth.type_distribution) dist[std::to_string(id)] = p;
    return json{
        {"seed", cfg.seed},
        {"threads", cfg.threads},
        {"taxonomy", cfg.taxonomy},
        {"synth",
         {{"width", cfg.synth.width},
          {"height", cfg.synth.height},
          {"noise_std", cfg.synth.noise_std},
          {"shading_strength", cfg.synth.shading_strength},
          {"type_distribution", dist}}},
        {"augment",
         {{"brightness", cfg.augment.brightness},
          {"contrast", cfg.augment.contrast},
          {"hflip_prob", cfg.augment.hflip_prob},
          {"degen_prob", cfg.augment.degen_prob}}},
        {"loss_weights",
         {{"lambda1", cfg.loss_weights.l1},
          {"lambda2", cfg.loss_weights.l2},
          {"lambda3", cfg.loss_weights.l3},
          {"lambda4", cfg.loss_weights.l4},
          {"lambda5", cfg.loss_weights.l5}}},
        {"edge",
         {{"sigma", cfg.edge.sigma},
          {"gt_dilation", cfg.edge.gt_dilation},
          {"clamp_eps", cfg.edge.clamp_eps}}},
        {"contrastive", {{"tau_init", cfg.tau_init}}},
        {"model",
         {{"channels", cfg.model.channels},
          {"embed_dim", cfg.model.embed_dim},
          {"num_queries", cfg.model.num_queries},
          {"decoder_layers", cfg.model.decoder_layers},
          {"vocab_size", cfg.model.vocab_size},
          {"bg_prior", cfg.model.bg_prior},
          {"class_bias_init", cfg.model.class_bias_init},
          {"task_text", cfg.model.task_text}}},
        {"optim",
         {{"lr", cfg.optim.lr},
          {"beta1", cfg.optim.beta1},
          {"beta2", cfg.optim.beta2},
          {"eps", cfg.optim.eps},
          {"weight_decay", cfg.optim.weight_decay},
          {"epochs", cfg.optim.epochs},
          {"batch_size", cfg.optim.batch_size},
          {"cosine_decay", cfg.optim.cosine_decay}}},
        {"paths",
         {{"train_manifest", cfg.paths.train_manifest},
          {"eval_manifest", cfg.paths.eval_manifest},
          {"checkpoint", cfg.paths.checkpoint},
          {"out_dir", cfg.paths.out_dir},
          {"train_log", cfg.paths.train_log},
          {"report", cfg.paths.report}}},
    }
        .dump(2);
}

RoomTaxonomy load_taxonomy(const RunConfig& cfg) {
    if (cfg.taxonomy.empty()) return RoomTaxonomy::default_lsun11();
    std::ifstream in(cfg.taxonomy);
    if (!in) throw std::runtime_error("cannot open taxonomy: " + cfg.taxonomy);
    std::stringstream buf;
    buf << in.rdbuf();
    return taxonomy_from_json(buf.str());
}

} // namespace lf
