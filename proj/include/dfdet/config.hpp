#pragma once

#include <fstream>
#include <json.hpp>

#include "dfdet/boosting.hpp"
#include "dfdet/generator.hpp"
#include "dfdet/model.hpp"
#include "dfdet/trainer.hpp"
#include "dfdet/tta.hpp"

// JSON (de)serialization for every config block. Unknown keys are rejected
// so a typo in a config file fails loudly instead of silently using a
// default.

namespace dfdet {

using json = nlohmann::json;

namespace configdetail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) {
                ok = true;
                break;
            }
        if (!ok) throw IoError(std::string("config: unknown key '") + key + "' in " + where);
    }
}

template <class V>
void get_if(const json& j, const char* key, V& out) {
    if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace configdetail

inline void to_json(json& j, const GeneratorConfig& c) {
    j = json{{"num_videos", c.num_videos},
             {"frames_per_video", c.frames_per_video},
             {"real_fake_ratio", c.real_fake_ratio},
             {"patch_side", c.patch_side},
             {"manipulation_strength", c.manipulation_strength},
             {"seed", c.seed},
             {"frame_side", c.frame_side},
             {"sample_stride", c.sample_stride},
             {"neighbor_radius", c.neighbor_radius}};
}

inline void from_json(const json& j, GeneratorConfig& c) {
    configdetail::check_keys(j,
                             {"num_videos", "frames_per_video", "real_fake_ratio", "patch_side",
                              "manipulation_strength", "seed", "frame_side", "sample_stride",
                              "neighbor_radius"},
                             "generator");
    configdetail::get_if(j, "num_videos", c.num_videos);
    configdetail::get_if(j, "frames_per_video", c.frames_per_video);
    configdetail::get_if(j, "real_fake_ratio", c.real_fake_ratio);
    configdetail::get_if(j, "patch_side", c.patch_side);
    configdetail::get_if(j, "manipulation_strength", c.manipulation_strength);
    configdetail::get_if(j, "seed", c.seed);
    configdetail::get_if(j, "frame_side", c.frame_side);
    configdetail::get_if(j, "sample_stride", c.sample_stride);
    configdetail::get_if(j, "neighbor_radius", c.neighbor_radius);
}

template <class T>
void to_json(json& j, const ModelConfig<T>& c) {
    j = json{{"input_side", c.backbone.input_side},
             {"channels", c.backbone.channels},
             {"feature_dim", c.backbone.feature_dim},
             {"arc_scale", c.backbone.arc_scale},
             {"arc_margin", c.backbone.arc_margin},
             {"gru_hidden", c.gru_hidden},
             {"gru_bi_layers", c.gru_bi_layers},
             {"afw_eps", c.afw_eps},
             {"detach_pw_input", c.detach_pw_input},
             {"normalize_features", c.normalize_features}};
}

template <class T>
void from_json(const json& j, ModelConfig<T>& c) {
    configdetail::check_keys(j,
                             {"input_side", "channels", "feature_dim", "arc_scale", "arc_margin",
                              "gru_hidden", "gru_bi_layers", "afw_eps", "detach_pw_input", "normalize_features"},
                             "model");
    configdetail::get_if(j, "input_side", c.backbone.input_side);
    configdetail::get_if(j, "channels", c.backbone.channels);
    configdetail::get_if(j, "feature_dim", c.backbone.feature_dim);
    configdetail::get_if(j, "arc_scale", c.backbone.arc_scale);
    configdetail::get_if(j, "arc_margin", c.backbone.arc_margin);
    configdetail::get_if(j, "gru_hidden", c.gru_hidden);
    configdetail::get_if(j, "gru_bi_layers", c.gru_bi_layers);
    configdetail::get_if(j, "afw_eps", c.afw_eps);
    configdetail::get_if(j, "detach_pw_input", c.detach_pw_input);
    configdetail::get_if(j, "normalize_features", c.normalize_features);
}

template <class T>
void to_json(json& j, const TrainConfig<T>& c) {
    j = json{{"lr", c.lr},
             {"beta1", c.beta1},
             {"beta2", c.beta2},
             {"adam_eps", c.adam_eps},
             {"videos_per_update", c.videos_per_update},
             {"frames_per_arcface_update", c.frames_per_arcface_update},
             {"warmup_arcface_batches", c.warmup_arcface_batches},
             {"arc_batch_size", c.arc_batch_size},
             {"arc_crops_per_video", c.arc_crops_per_video},
             {"max_videos", c.max_videos},
             {"checkpoint_every", c.checkpoint_every},
             {"seed", c.seed},
             {"use_arcface", c.use_arcface},
             {"use_bce_pw", c.use_bce_pw},
             {"use_bce_prnn", c.use_bce_prnn},
             {"deterministic", c.deterministic},
             {"max_track_patches", c.max_track_patches}};
}

template <class T>
void from_json(const json& j, TrainConfig<T>& c) {
    configdetail::check_keys(
        j, {"lr", "beta1", "beta2", "adam_eps", "videos_per_update", "frames_per_arcface_update",
            "warmup_arcface_batches", "arc_batch_size", "arc_crops_per_video", "max_videos",
            "checkpoint_every", "seed", "use_arcface", "use_bce_pw", "use_bce_prnn", "deterministic",
            "max_track_patches"},
        "train");
    configdetail::get_if(j, "lr", c.lr);
    configdetail::get_if(j, "beta1", c.beta1);
    configdetail::get_if(j, "beta2", c.beta2);
    configdetail::get_if(j, "adam_eps", c.adam_eps);
    configdetail::get_if(j, "videos_per_update", c.videos_per_update);
    configdetail::get_if(j, "frames_per_arcface_update", c.frames_per_arcface_update);
    configdetail::get_if(j, "warmup_arcface_batches", c.warmup_arcface_batches);
    configdetail::get_if(j, "arc_batch_size", c.arc_batch_size);
    configdetail::get_if(j, "arc_crops_per_video", c.arc_crops_per_video);
    configdetail::get_if(j, "max_videos", c.max_videos);
    configdetail::get_if(j, "checkpoint_every", c.checkpoint_every);
    configdetail::get_if(j, "seed", c.seed);
    configdetail::get_if(j, "use_arcface", c.use_arcface);
    configdetail::get_if(j, "use_bce_pw", c.use_bce_pw);
    configdetail::get_if(j, "use_bce_prnn", c.use_bce_prnn);
    configdetail::get_if(j, "deterministic", c.deterministic);
    configdetail::get_if(j, "max_track_patches", c.max_track_patches);
}

template <class T>
void to_json(json& j, const BoostConfig<T>& c) {
    j = json{{"lr", c.lr},
             {"videos_per_update", c.videos_per_update},
             {"passes", c.passes},
             {"seed", c.seed},
             {"objective", c.objective == BoostConfig<T>::Objective::combined_bce ? "combined-bce"
                                                                                  : "residual-mse"},
             {"residual_target_logit", c.residual_target_logit}};
}

template <class T>
void from_json(const json& j, BoostConfig<T>& c) {
    configdetail::check_keys(
        j, {"lr", "videos_per_update", "passes", "seed", "objective", "residual_target_logit"}, "boost");
    configdetail::get_if(j, "lr", c.lr);
    configdetail::get_if(j, "videos_per_update", c.videos_per_update);
    configdetail::get_if(j, "passes", c.passes);
    configdetail::get_if(j, "seed", c.seed);
    if (j.contains("objective")) {
        const std::string o = j.at("objective").get<std::string>();
        if (o == "combined-bce")
            c.objective = BoostConfig<T>::Objective::combined_bce;
        else if (o == "residual-mse")
            c.objective = BoostConfig<T>::Objective::residual_mse;
        else
            throw IoError("config: unknown boost objective '" + o + "'");
    }
    configdetail::get_if(j, "residual_target_logit", c.residual_target_logit);
}

inline void to_json(json& j, const TtaConfig& c) {
    j = json{{"offsets", c.offsets},
             {"flip_probability", c.flip_probability},
             {"seed", c.seed},
             {"enabled", c.enabled},
             {"average_logits", c.average_logits}};
}

inline void from_json(const json& j, TtaConfig& c) {
    configdetail::check_keys(j, {"offsets", "flip_probability", "seed", "enabled", "average_logits"},
                             "tta");
    configdetail::get_if(j, "offsets", c.offsets);
    configdetail::get_if(j, "flip_probability", c.flip_probability);
    configdetail::get_if(j, "seed", c.seed);
    configdetail::get_if(j, "enabled", c.enabled);
    configdetail::get_if(j, "average_logits", c.average_logits);
}

inline void to_json(json& j, const TrackOptions& c) {
    j = json{{"stride", c.stride}, {"margin_px", c.margin_px}, {"patch_side", c.patch_side}};
}

inline void from_json(const json& j, TrackOptions& c) {
    configdetail::check_keys(j, {"stride", "margin_px", "patch_side"}, "track");
    configdetail::get_if(j, "stride", c.stride);
    configdetail::get_if(j, "margin_px", c.margin_px);
    configdetail::get_if(j, "patch_side", c.patch_side);
}

inline json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("config: cannot open " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw IoError("config: parse error in " + path + ": " + e.what());
    }
    return j;
}

}  // namespace dfdet
