#pragma once

#include <string>
#include <vector>

#include "dfdet/boosting.hpp"
#include "dfdet/model.hpp"

// Test-time augmentation: the same detected regions are cropped at shifted
// frames (clamped at the sequence ends) and some sequences are horizontally
// flipped by a seeded per-video draw; the final score is the mean of the
// per-sequence predictions.

namespace dfdet {

struct TtaConfig {
    std::vector<int> offsets = {-2, -1, 0, 1, 2};
    double flip_probability = 0.5;
    std::uint64_t seed = 7;
    bool enabled = true;
    bool average_logits = false;  // probabilities are averaged by default

    void validate() const {
        if (offsets.empty()) throw ContractError("TtaConfig: need at least one offset");
        for (std::size_t i = 0; i < offsets.size(); ++i)
            for (std::size_t j = i + 1; j < offsets.size(); ++j)
                if (offsets[i] == offsets[j]) throw ContractError("TtaConfig: offsets must be distinct");
        if (flip_probability < 0 || flip_probability > 1)
            throw ContractError("TtaConfig: flip probability outside [0,1]");
    }
};

// One track per offset. Flip decisions are drawn per sequence from a stream
// seeded by (config seed, video id), so scoring order cannot change them.
inline std::vector<FaceTrack> build_tta_sequences(const VideoRecord& video, TrackStore& store,
                                                  const TtaConfig& cfg) {
    cfg.validate();
    if (store.track(video).patches.empty())
        throw ContractError("build_tta_sequences: video '" + video.video_id + "' has no face boxes");
    Rng rng(cfg.seed ^ fnv1a(video.video_id.data(), video.video_id.size()));
    std::vector<FaceTrack> out;
    out.reserve(cfg.offsets.size());
    for (int offset : cfg.offsets) {
        const bool flip = rng.bernoulli(cfg.flip_probability);
        out.push_back(store.track_with(video, offset, flip));
    }
    return out;
}

// Mean prediction over the sequences: boosted GRU output when a boost model
// is supplied, the plain sequence probability otherwise.
template <class T>
double tta_predict(const DetectorModel<T>& main_model, const DetectorModel<T>* boost_model,
                   const std::vector<FaceTrack>& sequences, bool average_logits = false) {
    if (sequences.empty()) throw ContractError("tta_predict: no sequences");
    NoGrad ng;
    // Per-sequence values stay in the model's scalar type: a single-sequence
    // TTA is then bit-identical to the plain prediction.
    double acc = 0;
    for (const FaceTrack& seq : sequences) {
        auto out = main_model.forward_input(main_model.track_to_input(seq));
        T logit = out.gru_logit->value[0];
        if (boost_model) {
            auto bout = boost_model->forward_input(boost_model->track_to_input(seq));
            logit += bout.gru_logit->value[0];
        }
        acc += static_cast<double>(average_logits ? logit : opdetail::sigmoid_val(logit));
    }
    acc /= static_cast<double>(sequences.size());
    return average_logits ? opdetail::sigmoid_val(acc) : acc;
}

template <class T>
double tta_predict(const DetectorModel<T>& main_model, const std::vector<FaceTrack>& sequences,
                   bool average_logits = false) {
    return tta_predict<T>(main_model, nullptr, sequences, average_logits);
}

enum class Stage { logit_mean, afw, gru, boosted, boosted_tta };

inline const char* to_string(Stage s) {
    switch (s) {
        case Stage::logit_mean: return "logit-mean";
        case Stage::afw: return "afw";
        case Stage::gru: return "gru";
        case Stage::boosted: return "boosted";
        default: return "boosted+tta";
    }
}

inline Stage parse_stage(const std::string& s) {
    if (s == "logit-mean") return Stage::logit_mean;
    if (s == "afw") return Stage::afw;
    if (s == "gru") return Stage::gru;
    if (s == "boosted") return Stage::boosted;
    if (s == "boosted+tta") return Stage::boosted_tta;
    throw ContractError("unknown stage '" + s + "'");
}

struct PredictOutcome {
    double probability = 0.5;
    bool no_face = false;
};

// Stage-selected score for one video. A video with no detected faces scores
// the maximum-entropy 0.5 with the no-face flag set.
template <class T>
PredictOutcome predict_video(const DetectorModel<T>& main_model, const DetectorModel<T>* boost_model,
                             TrackStore& store, const VideoRecord& video, Stage stage,
                             const TtaConfig& tta) {
    if ((stage == Stage::boosted || stage == Stage::boosted_tta) && !boost_model)
        throw ContractError(std::string("predict_video: stage '") + to_string(stage) +
                            "' requires a boost checkpoint");
    const FaceTrack& track = store.track(video);
    if (track.patches.empty()) return PredictOutcome{0.5, true};

    if (stage == Stage::boosted_tta)
        return PredictOutcome{
            tta_predict(main_model, boost_model, build_tta_sequences(video, store, tta),
                        tta.average_logits),
            false};

    NoGrad ng;
    auto out = main_model.forward_input(main_model.track_to_input(track));
    switch (stage) {
        case Stage::logit_mean: return {static_cast<double>(out.p_logit_mean()), false};
        case Stage::afw: return {static_cast<double>(out.p_w()), false};
        case Stage::gru: return {static_cast<double>(out.p_rnn()), false};
        default: {
            auto bout = boost_model->forward_input(boost_model->track_to_input(track));
            return {static_cast<double>(combine_outputs(out, bout, main_model.config().afw_eps).p_rnn_b),
                    false};
        }
    }
}

}  // namespace dfdet
