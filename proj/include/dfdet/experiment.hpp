#pragma once

#include <cstdio>
#include <filesystem>
#include <map>

#include "dfdet/config.hpp"

// Experiment orchestration: per seed, generate data, warm up + train the
// main network, train the boosting replica on the validation split, evaluate
// every stage on validation and test, then aggregate seed means into the
// accuracy-by-stage and log-loss tables. Fully seeded; the emitted files are
// byte-identical across runs.

namespace dfdet {

struct ExperimentConfig {
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    GeneratorConfig generator;  // 200 videos, strength 0.6 by default
    ModelConfig<float> model;
    TrainConfig<float> train;
    BoostConfig<float> boost;
    TtaConfig tta;
    TrackOptions track;
    bool keep_data = false;  // per-seed frame files are deleted once evaluated

    // Desk-scale defaults: small enough to train on one core in ~2 minutes
    // per seed, dimensioned per the compact-model defaults.
    ExperimentConfig() {
        model.backbone.input_side = 64;
        model.backbone.channels = {8, 16, 24, 32};
        model.backbone.feature_dim = 128;
        model.gru_hidden = 64;
        model.gru_bi_layers = 3;
        track.stride = 10;
        track.margin_px = 6;
        track.patch_side = 64;
        train.lr = 0.002f;
        train.videos_per_update = 8;
        train.frames_per_arcface_update = 64;
        train.warmup_arcface_batches = 50;
        train.arc_batch_size = 32;
        train.arc_crops_per_video = 2;
        train.max_videos = 1000;
        train.checkpoint_every = 250;
        boost.lr = 0.002f;
        boost.videos_per_update = 8;
        boost.passes = 5;
    }
};

inline void to_json(json& j, const ExperimentConfig& c) {
    j = json{{"seeds", c.seeds},   {"generator", c.generator}, {"model", c.model}, {"train", c.train},
             {"boost", c.boost},   {"tta", c.tta},             {"track", c.track},
             {"keep_data", c.keep_data}};
}

inline void from_json(const json& j, ExperimentConfig& c) {
    configdetail::check_keys(
        j, {"seeds", "generator", "model", "train", "boost", "tta", "track", "keep_data"}, "experiment");
    configdetail::get_if(j, "seeds", c.seeds);
    if (j.contains("generator")) j.at("generator").get_to(c.generator);
    if (j.contains("model")) j.at("model").get_to(c.model);
    if (j.contains("train")) j.at("train").get_to(c.train);
    if (j.contains("boost")) j.at("boost").get_to(c.boost);
    if (j.contains("tta")) j.at("tta").get_to(c.tta);
    if (j.contains("track")) j.at("track").get_to(c.track);
    configdetail::get_if(j, "keep_data", c.keep_data);
}

struct SeedOutcome {
    std::uint64_t seed = 0;
    MetricReport val;
    MetricReport test;
    TrainStats<float> train_stats;
    BoostTrainStats boost_stats;
};

struct ExperimentResult {
    ExperimentConfig config;
    std::vector<SeedOutcome> seeds;

    // Mean over seeds of one metric on one split's stage; absent if any seed
    // lacks the stage (or, for balanced accuracy, reports it absent).
    std::optional<double> mean(const std::string& split, const std::string& stage, bool accuracy) const {
        double acc = 0;
        for (const auto& s : seeds) {
            const MetricReport& r = split == "val" ? s.val : s.test;
            const StageMetrics* m = r.find(stage);
            if (!m) return std::nullopt;
            if (accuracy) {
                if (!m->balanced_acc) return std::nullopt;
                acc += *m->balanced_acc;
            } else {
                acc += m->logloss;
            }
        }
        return seeds.empty() ? std::nullopt : std::optional<double>(acc / seeds.size());
    }
};

namespace expdetail {

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

inline void write_predictions(const std::string& path, std::span<const PredictionBundle> bundles,
                              const char* split) {
    std::ofstream os(path, std::ios::app);
    for (const auto& b : bundles) {
        json j{{"split", split},
               {"video_id", b.video_id},
               {"label", b.label},
               {"logit_mean", b.p_logit_mean},
               {"afw", b.p_w},
               {"gru", b.p_rnn},
               {"no_face", b.no_face}};
        if (b.p_w_boost) j["afw_boost"] = *b.p_w_boost;
        if (b.p_rnn_boost) j["gru_boost"] = *b.p_rnn_boost;
        if (b.p_tta) j["gru_boost_tta"] = *b.p_tta;
        os << j.dump() << "\n";
    }
}

inline void write_report_json(json& into, const MetricReport& r) {
    json stages = json::object();
    for (const auto& [name, m] : r.stages) {
        json e{{"log_loss", m.logloss}, {"n", m.n}};
        if (m.balanced_acc)
            e["balanced_accuracy"] = *m.balanced_acc;
        else
            e["balanced_accuracy"] = nullptr;
        stages[name] = e;
    }
    into = json{{"split", r.split}, {"n_real", r.n_real}, {"n_fake", r.n_fake}, {"stages", stages}};
}

}  // namespace expdetail

// Runs one seed end to end. data_dir receives the generated frames; outputs
// (checkpoints, logs, predictions) land in seed_dir.
inline SeedOutcome run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& seed_dir,
                            std::ostream* progress) {
    namespace fs = std::filesystem;
    fs::create_directories(seed_dir);
    const std::string data_dir = seed_dir + "/data";

    GeneratorConfig gen = cfg.generator;
    gen.seed = seed;
    gen.patch_side = cfg.track.patch_side;
    if (progress) (*progress) << "[seed " << seed << "] generating " << gen.num_videos << " videos\n";
    Manifest manifest = generate_synthetic_dataset(gen, data_dir);
    TrackStore store(manifest, data_dir, cfg.track);

    const std::string echo = json(cfg).dump();

    DetectorModel<float> model(cfg.model, seed * 7919 + 1);
    TrainConfig<float> tc = cfg.train;
    tc.seed = seed * 104729 + 3;
    tc.config_echo = echo;
    tc.snapshot_path = seed_dir + "/diagnostic_snapshot.ckpt";

    std::ofstream train_log(seed_dir + "/train_log.jsonl");
    Trainer<float> trainer(model, store, tc, &train_log);
    trainer.estimate_normalization();
    if (progress) (*progress) << "[seed " << seed << "] arcface warmup (" << tc.warmup_arcface_batches
                              << " batches)\n";
    trainer.warmup_arcface();
    if (progress) (*progress) << "[seed " << seed << "] training (" << tc.max_videos << " videos)\n";

    SeedOutcome outcome;
    outcome.seed = seed;
    outcome.train_stats = trainer.train();
    model.load(trainer.best_checkpoint());  // best-on-validation parameters
    save_checkpoint(seed_dir + "/main.ckpt", trainer.best_checkpoint());

    DetectorModel<float> boost(cfg.model, seed * 15485863 + 5, /*zero_init_heads=*/true);
    BoostConfig<float> bc = cfg.boost;
    bc.seed = seed * 6700417 + 9;
    if (progress) (*progress) << "[seed " << seed << "] boosting on the validation split\n";
    outcome.boost_stats = train_boosting(model, boost, store, Split::val, bc, &train_log);
    save_checkpoint(seed_dir + "/boost.ckpt", boost.to_checkpoint(echo));

    if (progress) (*progress) << "[seed " << seed << "] evaluating\n";
    auto val_bundles = evaluate_split<float>(model, &boost, store, Split::val);
    auto test_bundles = evaluate_split<float>(model, &boost, store, Split::test, &cfg.tta);

    const std::string pred_path = seed_dir + "/predictions.jsonl";
    std::ofstream(pred_path, std::ios::trunc).close();
    expdetail::write_predictions(pred_path, val_bundles, "val");
    expdetail::write_predictions(pred_path, test_bundles, "test");

    outcome.val = make_report("val", val_bundles);
    outcome.test = make_report("test", test_bundles);

    json report;
    report["seed"] = seed;
    report["config"] = json::parse(echo);
    expdetail::write_report_json(report["val"], outcome.val);
    expdetail::write_report_json(report["test"], outcome.test);
    std::ofstream(seed_dir + "/metrics.json") << report.dump(2) << "\n";

    if (!cfg.keep_data) {
        std::error_code ec;
        std::filesystem::remove_all(data_dir, ec);
    }
    return outcome;
}

// Accuracy-by-stage table (validation and test) over seed means.
inline std::string render_accuracy_table(const ExperimentResult& res) {
    std::string out;
    out += "stage         val-bacc   test-bacc\n";
    out += "-----------  ---------  ----------\n";
    for (const char* stage : {"logit-mean", "afw", "gru"}) {
        auto v = res.mean("val", stage, true);
        auto t = res.mean("test", stage, true);
        char line[96];
        std::snprintf(line, sizeof(line), "%-11s  %9s  %10s\n", stage,
                      v ? expdetail::fmt(*v).c_str() : "absent", t ? expdetail::fmt(*t).c_str() : "absent");
        out += line;
    }
    return out;
}

// Log-loss table on the test split: sequence baseline, boosted, boosted+TTA.
inline std::string render_logloss_table(const ExperimentResult& res) {
    std::string out;
    out += "method            test-logloss\n";
    out += "---------------  -------------\n";
    const std::pair<const char*, const char*> rows[] = {
        {"baseline (gru)", "gru"}, {"+ boosting", "gru+boost"}, {"+ tta", "gru+boost+tta"}};
    for (const auto& [label, stage] : rows) {
        auto v = res.mean("test", stage, false);
        char line[96];
        std::snprintf(line, sizeof(line), "%-15s  %13s\n", label,
                      v ? expdetail::fmt(*v).c_str() : "absent");
        out += line;
    }
    return out;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                                       std::ostream* progress = nullptr) {
    namespace fs = std::filesystem;
    if (cfg.seeds.empty()) throw ContractError("run_experiment: no seeds");
    fs::create_directories(out_dir);

    ExperimentResult res;
    res.config = cfg;
    for (std::uint64_t seed : cfg.seeds)
        res.seeds.push_back(run_seed(cfg, seed, out_dir + "/seed_" + std::to_string(seed), progress));

    const std::string acc_table = render_accuracy_table(res);
    const std::string ll_table = render_logloss_table(res);
    std::ofstream(out_dir + "/accuracy_by_stage.txt") << acc_table;
    std::ofstream(out_dir + "/logloss_by_method.txt") << ll_table;

    json summary;
    summary["config"] = cfg;
    summary["seeds"] = json::array();
    for (const auto& s : res.seeds) {
        json e;
        e["seed"] = s.seed;
        expdetail::write_report_json(e["val"], s.val);
        expdetail::write_report_json(e["test"], s.test);
        summary["seeds"].push_back(e);
    }
    json means = json::object();
    for (const char* split : {"val", "test"})
        for (const char* stage : {"logit-mean", "afw", "gru", "afw+boost", "gru+boost", "gru+boost+tta"}) {
            auto acc = res.mean(split, stage, true);
            auto ll = res.mean(split, stage, false);
            if (acc) means[std::string(split) + "/" + stage + "/balanced_accuracy"] = *acc;
            if (ll) means[std::string(split) + "/" + stage + "/log_loss"] = *ll;
        }
    summary["means"] = means;
    std::ofstream(out_dir + "/experiment_report.json") << summary.dump(2) << "\n";

    if (progress) (*progress) << "\n" << acc_table << "\n" << ll_table;
    return res;
}

}  // namespace dfdet
