#pragma once

#include <array>
#include <optional>
#include <string>

#include "dfdet/afw.hpp"
#include "dfdet/arcface.hpp"
#include "dfdet/backbone.hpp"
#include "dfdet/facetrack.hpp"
#include "dfdet/gru.hpp"

// The full per-video detector: backbone features -> per-face logit/weight
// heads -> face-weighted video logit -> GRU sequence logit. One instance
// owns its parameter registry; the boosting stage instantiates a second
// replica of the same class.

namespace dfdet {

template <class T>
struct ModelConfig {
    BackboneConfig<T> backbone;
    int gru_hidden = 64;
    int gru_bi_layers = 3;
    T afw_eps = T(1e-8);
    // When set (default), the video-level p_w entering the GRU input rows is
    // a detached copy, so BCE(p_RNN) does not reach the AFW average through
    // that path.
    bool detach_pw_input = true;
    // L2-normalize embeddings to norm sqrt(D) before the heads and the GRU.
    // Without it the margin loss lets feature norms grow unbounded (it only
    // constrains direction) and the saturated heads stop training.
    bool normalize_features = true;

    int gru_input_dim() const { return backbone.feature_dim + 3; }
};

template <class T>
struct TrackOutput {
    Var<T> features;   // [N, D]
    Var<T> logits;     // [N, 1] per-face l_j
    Var<T> weights;    // [N, 1] per-face w_j
    Var<T> afw_logit;  // [1, 1] pre-sigmoid video logit
    Var<T> gru_logit;  // [1, 1] pre-sigmoid l_RNN

    T p_w() const { return opdetail::sigmoid_val(afw_logit->value[0]); }
    T p_rnn() const { return opdetail::sigmoid_val(gru_logit->value[0]); }
    T p_logit_mean() const {
        T acc = T(0);
        for (std::size_t i = 0; i < logits->value.size(); ++i) acc += logits->value[i];
        return opdetail::sigmoid_val(acc / static_cast<T>(logits->value.size()));
    }
};

template <class T>
class DetectorModel {
public:
    DetectorModel(const ModelConfig<T>& cfg, std::uint64_t init_seed, bool zero_init_heads = false)
        : cfg_(cfg), rng_(init_seed) {
        cfg_.backbone.validate();
        backbone_.emplace(cfg_.backbone, registry_, rng_, "backbone/");
        heads_.emplace(cfg_.backbone.feature_dim, registry_, rng_, "afw/", zero_init_heads);
        arc_w_ = registry_.add(
            "arcface/W",
            Tensor<T>::randn({2, static_cast<std::size_t>(cfg_.backbone.feature_dim)}, rng_, T(0.1)));
        GruConfig<T> gcfg{cfg_.gru_input_dim(), cfg_.gru_hidden, cfg_.gru_bi_layers};
        gru_.emplace(gcfg, registry_, rng_, "gru/", zero_init_heads);
        norm_mean_ = registry_.add_buffer("norm/mean", Tensor<T>({3}, T(0.5)));
        norm_std_ = registry_.add_buffer("norm/std", Tensor<T>({3}, T(0.25)));
    }

    const ModelConfig<T>& config() const { return cfg_; }
    ParamRegistry<T>& params() { return registry_; }
    const ParamRegistry<T>& params() const { return registry_; }
    const Var<T>& arcface_weights() const { return arc_w_; }

    // Channel statistics used to standardize inputs; estimated from training
    // crops and carried in the checkpoint.
    void set_normalization(const std::array<T, 3>& mean, const std::array<T, 3>& stddev) {
        for (int c = 0; c < 3; ++c) {
            norm_mean_->value[c] = mean[c];
            norm_std_->value[c] = stddev[c];
        }
    }

    // Patches -> [N, 3, S, S], values scaled to [0,1] then standardized.
    Tensor<T> patches_to_input(const std::vector<const Image8*>& patches) const {
        const int S = cfg_.backbone.input_side;
        const std::size_t N = patches.size();
        if (N == 0) throw ContractError("patches_to_input: empty batch");
        Tensor<T> x({N, 3, static_cast<std::size_t>(S), static_cast<std::size_t>(S)});
        for (std::size_t n = 0; n < N; ++n) {
            const Image8& img = *patches[n];
            if (img.width != S || img.height != S)
                throw ShapeError("patches_to_input: patch " + std::to_string(n) + " is " +
                                 std::to_string(img.width) + "x" + std::to_string(img.height) +
                                 ", expected side " + std::to_string(S));
            for (int c = 0; c < 3; ++c) {
                const T m = norm_mean_->value[c];
                const T inv_s = T(1) / norm_std_->value[c];
                T* dst = x.data() + ((n * 3 + c) * S) * S;
                for (int i = 0; i < S * S; ++i)
                    dst[i] = (static_cast<T>(img.px[static_cast<std::size_t>(i) * 3 + c]) / T(255) - m) *
                             inv_s;
            }
        }
        return x;
    }

    Tensor<T> track_to_input(const FaceTrack& track) const {
        std::vector<const Image8*> ptrs;
        ptrs.reserve(track.patches.size());
        for (const auto& p : track.patches) ptrs.push_back(&p.image);
        return patches_to_input(ptrs);
    }

    Var<T> extract_features(const Var<T>& input) const {
        Var<T> f = backbone_->forward(input);
        if (cfg_.normalize_features)
            f = dfdet::scale(l2_normalize_rows(f),
                             std::sqrt(static_cast<T>(cfg_.backbone.feature_dim)));
        return f;
    }

    typename LogitWeightHeads<T>::Output head_outputs(const Var<T>& features) const {
        return heads_->forward(features);
    }

    Var<T> arcface(const Var<T>& features, const std::vector<std::size_t>& labels) const {
        return arcface_loss(features, labels, arc_w_, cfg_.backbone.arc_scale, cfg_.backbone.arc_margin);
    }

    // Full video pass from an input tensor [N, 3, S, S].
    TrackOutput<T> forward_input(const Tensor<T>& input) const {
        TrackOutput<T> out;
        auto x = make_constant<T>(input);
        out.features = extract_features(x);
        auto ho = heads_->forward(out.features);
        out.logits = ho.logits;
        out.weights = ho.weights;
        out.afw_logit = dfdet::afw_logit(out.logits, out.weights, cfg_.afw_eps);
        auto pw = sigmoid(out.afw_logit);
        if (cfg_.detach_pw_input) pw = detach(pw);
        const std::size_t N = input.dim(0);
        auto gru_in =
            concat<T>({out.features, out.logits, out.weights, broadcast_rows(reshape(pw, {1, 1}), N)}, 1);
        out.gru_logit = reshape(gru_->forward(gru_in), Shape{1});
        return out;
    }

    TrackOutput<T> forward_track(const FaceTrack& track) const {
        if (track.patches.empty()) throw ContractError("forward_track: track has no patches");
        return forward_input(track_to_input(track));
    }

    std::uint64_t hash_of(const std::string& prefix) const { return registry_.value_hash(prefix); }

    Checkpoint<T> to_checkpoint(std::string config_echo) const {
        return registry_.to_checkpoint(std::move(config_echo));
    }
    void load(const Checkpoint<T>& ck) { registry_.load(ck); }

private:
    ModelConfig<T> cfg_;
    Rng rng_;
    ParamRegistry<T> registry_;
    std::optional<Backbone<T>> backbone_;
    std::optional<LogitWeightHeads<T>> heads_;
    std::optional<GruNet<T>> gru_;
    Var<T> arc_w_;
    Var<T> norm_mean_, norm_std_;
};

}  // namespace dfdet
