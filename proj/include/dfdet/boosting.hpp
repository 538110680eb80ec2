#pragma once

#include <ostream>
#include <unordered_map>

#include "dfdet/adam.hpp"
#include "dfdet/model.hpp"
#include "dfdet/sampler.hpp"

// Boosting network: an architecture replica trained on the validation split
// to correct the frozen main network in the logit domain. The combined
// predictions are the boosted face-weighted average and sigma of the summed
// sequence logits; training minimizes BCE of those combined outputs by
// default (the residual-regression reading is available behind the
// objective switch). Main outputs are precomputed as constants, so gradients
// can only reach the boost parameters.

namespace dfdet {

template <class T>
struct BoostConfig {
    enum class Objective { combined_bce, residual_mse };

    T lr = T(0.001);
    int videos_per_update = 8;
    int passes = 3;  // balanced draws, in units of the validation split size
    std::uint64_t seed = 99;
    Objective objective = Objective::combined_bce;
    T residual_target_logit = T(3);  // +/- target for the residual objective

    void validate() const {
        if (!(lr > T(0)) || videos_per_update < 1 || passes < 0)
            throw ContractError("BoostConfig: bad values");
    }
};

template <class T>
struct BoostedValues {
    T p_w_b;
    T p_rnn_b;
};

// Inference-time combination of main and boost outputs (plain values).
template <class T>
BoostedValues<T> combine_outputs(const TrackOutput<T>& main_out, const TrackOutput<T>& boost_out, T eps) {
    BoostedValues<T> out;
    out.p_w_b = combine_afw_value<T>(std::span<const T>(main_out.logits->value.vec()),
                                     std::span<const T>(main_out.weights->value.vec()),
                                     std::span<const T>(boost_out.logits->value.vec()),
                                     std::span<const T>(boost_out.weights->value.vec()), eps);
    out.p_rnn_b = combine_gru_value<T>(main_out.gru_logit->value[0], boost_out.gru_logit->value[0]);
    return out;
}

// Frozen per-video main-network outputs, captured once.
template <class T>
struct FrozenMainOutputs {
    Tensor<T> logits;   // [N, 1]
    Tensor<T> weights;  // [N, 1]
    T gru_logit = T(0);
};

struct BoostTrainStats {
    int videos_processed = 0;
    int updates = 0;
    double final_loss = 0;
};

// Trains the boost replica on the given split (the paper uses validation)
// with the main network frozen. The main model is const throughout; a hash
// assertion at the end backs the frozenness contract.
template <class T>
BoostTrainStats train_boosting(const DetectorModel<T>& main_model, DetectorModel<T>& boost_model,
                               TrackStore& store, Split split, const BoostConfig<T>& cfg,
                               std::ostream* log = nullptr) {
    cfg.validate();
    const std::uint64_t main_hash_before = main_model.params().value_hash();

    // One eval pass over the split caches the frozen outputs.
    std::unordered_map<std::string, FrozenMainOutputs<T>> frozen;
    const auto videos = store.manifest().split_videos(split);
    if (videos.empty()) throw ContractError("train_boosting: empty split");
    for (const VideoRecord* rec : videos) {
        const FaceTrack& track = store.track(*rec);
        if (track.patches.empty()) continue;
        NoGrad ng;
        auto out = main_model.forward_input(main_model.track_to_input(track));
        frozen[rec->video_id] = FrozenMainOutputs<T>{out.logits->value, out.weights->value,
                                                     out.gru_logit->value[0]};
    }

    BalancedSampler sampler(store.manifest(), split, Rng(cfg.seed));
    auto params = boost_model.params().vars();
    auto adam = make_adam_state(params, cfg.lr);
    std::vector<Tensor<T>> acc;
    acc.reserve(params.size());
    for (const auto& p : params) acc.emplace_back(p->value.shape());

    BoostTrainStats stats;
    const T eps = boost_model.config().afw_eps;
    const int total = cfg.passes * static_cast<int>(videos.size());
    int since_update = 0;
    for (int i = 0; i < total; ++i) {
        const VideoRecord* rec = sampler.next();
        auto fit = frozen.find(rec->video_id);
        if (fit == frozen.end()) continue;
        const FrozenMainOutputs<T>& fm = fit->second;
        const T y = rec->label == Label::fake ? T(1) : T(0);

        auto bout = boost_model.forward_input(boost_model.track_to_input(store.track(*rec)));
        auto main_l = make_constant<T>(fm.logits);
        auto main_w = make_constant<T>(fm.weights);
        auto combined_afw = combine_afw_logit(main_l, main_w, bout.logits, bout.weights, eps);
        auto combined_gru = add_scalar(bout.gru_logit, fm.gru_logit);

        Var<T> loss;
        if (cfg.objective == BoostConfig<T>::Objective::combined_bce) {
            loss = add(bce_with_logits(combined_afw, Tensor<T>::scalar(y)),
                       bce_with_logits(combined_gru, Tensor<T>({1}, y)));
        } else {
            // Residual reading: push the combined logits toward +/-C.
            const T target = y > T(0.5) ? cfg.residual_target_logit : -cfg.residual_target_logit;
            auto da = add_scalar(combined_afw, -target);
            auto dg = add_scalar(combined_gru, -target);
            loss = add(sum(mul(da, da)), sum(mul(dg, dg)));
        }
        stats.final_loss = static_cast<double>(loss->value[0]);
        backward(loss);
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            if (params[pi]->has_grad()) {
                accumulate(acc[pi], params[pi]->grad);
                params[pi]->zero_grad();
            }
        }
        ++stats.videos_processed;
        if (++since_update == cfg.videos_per_update) {
            adam_step(params, acc, adam);
            for (auto& a : acc) a.fill(T(0));
            since_update = 0;
            ++stats.updates;
            if (log) (*log) << "{\"phase\":\"boost\",\"update\":" << stats.updates
                            << ",\"loss\":" << stats.final_loss << "}\n";
        }
    }

    if (main_model.params().value_hash() != main_hash_before)
        throw ContractError("train_boosting: main network parameters changed");
    return stats;
}

}  // namespace dfdet
