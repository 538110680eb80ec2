#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dfdet/ops.hpp"
#include "dfdet/params.hpp"
#include "dfdet/rng.hpp"

// Compact patch-embedding network: four stride-2 conv stages with ReLU,
// global average pooling and a linear projection to the feature dimension,
// plus the per-face logit/weight heads that feed the face-weighting stage.

namespace dfdet {

template <class T>
struct BackboneConfig {
    int input_side = 64;
    std::vector<int> channels = {8, 16, 24, 32};  // one entry per stride-2 stage
    int feature_dim = 128;                        // D
    T arc_scale = T(30);                          // s
    T arc_margin = T(0.35);                       // m, radians

    void validate() const {
        if (input_side < 8) throw ContractError("BackboneConfig: input_side too small");
        if (channels.empty()) throw ContractError("BackboneConfig: need at least one stage");
        for (int c : channels)
            if (c < 1) throw ContractError("BackboneConfig: channel widths must be positive");
        if (feature_dim < 8) throw ContractError("BackboneConfig: feature_dim must be >= 8");
        if (!(arc_scale > T(0))) throw ContractError("BackboneConfig: arc_scale must be positive");
        if (!(arc_margin >= T(0)) || !(arc_margin < T(1.5707963)))
            throw ContractError("BackboneConfig: arc_margin must be in [0, pi/2)");
        if ((input_side >> channels.size()) < 1)
            throw ContractError("BackboneConfig: too many stages for input_side");
    }
};

template <class T>
class Backbone {
public:
    Backbone(const BackboneConfig<T>& cfg, ParamRegistry<T>& reg, Rng& rng, const std::string& prefix)
        : cfg_(cfg) {
        cfg.validate();
        int in_ch = 3;
        for (std::size_t s = 0; s < cfg.channels.size(); ++s) {
            const int out_ch = cfg.channels[s];
            const T std_dev = std::sqrt(T(2) / static_cast<T>(in_ch * 9));
            conv_w_.push_back(reg.add(prefix + "conv" + std::to_string(s) + "/w",
                                      Tensor<T>::randn({static_cast<std::size_t>(out_ch),
                                                        static_cast<std::size_t>(in_ch), 3, 3},
                                                       rng, std_dev)));
            conv_b_.push_back(reg.add(prefix + "conv" + std::to_string(s) + "/b",
                                      Tensor<T>({static_cast<std::size_t>(out_ch)})));
            in_ch = out_ch;
        }
        const T fc_bound = std::sqrt(T(1) / static_cast<T>(in_ch));
        fc_w_ = reg.add(prefix + "fc/w",
                        Tensor<T>::rand_uniform({static_cast<std::size_t>(cfg.feature_dim),
                                                 static_cast<std::size_t>(in_ch)},
                                                rng, -fc_bound, fc_bound));
        fc_b_ = reg.add(prefix + "fc/b", Tensor<T>({static_cast<std::size_t>(cfg.feature_dim)}));
    }

    // x: [B, 3, S, S] -> features [B, D]
    Var<T> forward(const Var<T>& x) const {
        if (x->value.ndim() != 4 || x->value.dim(2) != static_cast<std::size_t>(cfg_.input_side) ||
            x->value.dim(3) != static_cast<std::size_t>(cfg_.input_side))
            throw ShapeError("backbone: expected [B,3," + std::to_string(cfg_.input_side) + "," +
                             std::to_string(cfg_.input_side) + "], got " + shape_str(x->value.shape()));
        Var<T> h = x;
        for (std::size_t s = 0; s < conv_w_.size(); ++s)
            h = relu(conv2d(h, conv_w_[s], conv_b_[s], 2, 1));
        return linear(global_avg_pool(h), fc_w_, fc_b_);
    }

    const BackboneConfig<T>& config() const { return cfg_; }

private:
    BackboneConfig<T> cfg_;
    std::vector<Var<T>> conv_w_;
    std::vector<Var<T>> conv_b_;
    Var<T> fc_w_, fc_b_;
};

// Per-face heads: two affine maps from the shared feature. The weight head
// output goes through ReLU, which is what keeps w_j >= 0 at all times.
template <class T>
class LogitWeightHeads {
public:
    struct Output {
        Var<T> logits;   // [N, 1], unconstrained
        Var<T> weights;  // [N, 1], non-negative
    };

    LogitWeightHeads(int feature_dim, ParamRegistry<T>& reg, Rng& rng, const std::string& prefix,
                     bool zero_init = false) {
        const std::size_t d = static_cast<std::size_t>(feature_dim);
        auto init = [&](T stddev) {
            return zero_init ? Tensor<T>({1, d}) : Tensor<T>::randn({1, d}, rng, stddev);
        };
        logit_w_ = reg.add(prefix + "logit_head/w", init(T(0.01)));
        logit_b_ = reg.add(prefix + "logit_head/b", Tensor<T>({1}));
        weight_w_ = reg.add(prefix + "weight_head/w", init(T(0.01)));
        // Positive bias start: all faces weigh ~1 (a flat average) and the
        // ReLU never begins saturated at zero, which would block gradient
        // flow into the weight head entirely. Boost replicas start at zero
        // so the combined prediction reduces to the main one.
        weight_b_ = reg.add(prefix + "weight_head/b", Tensor<T>({1}, zero_init ? T(0) : T(1)));
    }

    Output forward(const Var<T>& features) const {
        opdetail::require_2d("logit_weight_heads", features);
        if (features->value.dim(1) != logit_w_->value.dim(1))
            throw ShapeError("logit_weight_heads: feature dim " + shape_str(features->value.shape()) +
                             " vs " + shape_str(logit_w_->value.shape()));
        return Output{linear(features, logit_w_, logit_b_), relu(linear(features, weight_w_, weight_b_))};
    }

private:
    Var<T> logit_w_, logit_b_, weight_w_, weight_b_;
};

}  // namespace dfdet
