#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfdet/common.hpp"

// Evaluation currency and the two metrics: balanced accuracy and the
// clipped log-likelihood loss. Labels use 1 = fake (the positive class).

namespace dfdet {

struct PredictionBundle {
    std::string video_id;
    int label = 0;  // 1 = fake
    double p_logit_mean = 0.5;
    double p_w = 0.5;
    double p_rnn = 0.5;
    std::optional<double> p_w_boost;
    std::optional<double> p_rnn_boost;
    std::optional<double> p_tta;  // TTA-averaged final probability
    bool no_face = false;
};

struct LabeledProb {
    double p = 0.5;
    int label = 0;
};

inline constexpr double kDefaultLogLossClip = 1e-15;

// Mean of -[y ln p + (1-y) ln(1-p)] with p clipped to [clip, 1-clip]. The
// clip is applied to the true-label probability directly, so a fully wrong
// prediction costs exactly -ln(clip) even for clips below double epsilon-of-1.
inline double log_loss(std::span<const LabeledProb> samples, double clip = kDefaultLogLossClip) {
    if (samples.empty()) throw ContractError("log_loss: no samples");
    double total = 0;
    for (const auto& s : samples) {
        if (s.p < 0.0 || s.p > 1.0)
            throw ContractError("log_loss: prediction outside [0,1]: " + std::to_string(s.p));
        const double q = s.label == 1 ? s.p : 1.0 - s.p;
        total += -std::log(std::clamp(q, clip, 1.0 - clip));
    }
    return total / static_cast<double>(samples.size());
}

// (TPR + TNR) / 2 at the threshold; p == threshold classifies as fake.
// Absent when the sample set is single-class.
inline std::optional<double> balanced_accuracy(std::span<const LabeledProb> samples,
                                               double threshold = 0.5) {
    std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
    for (const auto& s : samples) {
        const bool pred_fake = s.p >= threshold;
        if (s.label == 1)
            (pred_fake ? tp : fn)++;
        else
            (pred_fake ? fp : tn)++;
    }
    if (tp + fn == 0 || tn + fp == 0) return std::nullopt;
    const double tpr = static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double tnr = static_cast<double>(tn) / static_cast<double>(tn + fp);
    return (tpr + tnr) / 2.0;
}

struct StageMetrics {
    std::optional<double> balanced_acc;
    double logloss = 0;
    std::size_t n = 0;
};

inline StageMetrics stage_metrics(std::span<const LabeledProb> samples, double clip = kDefaultLogLossClip) {
    StageMetrics m;
    m.n = samples.size();
    m.balanced_acc = balanced_accuracy(samples);
    m.logloss = log_loss(samples, clip);
    return m;
}

// Pull one stage's probabilities out of a bundle set. Unavailable optional
// stages are skipped entirely.
template <class Getter>
std::vector<LabeledProb> stage_samples(std::span<const PredictionBundle> bundles, Getter get) {
    std::vector<LabeledProb> out;
    for (const auto& b : bundles) {
        const std::optional<double> p = get(b);
        if (p) out.push_back({*p, b.label});
    }
    return out;
}

struct MetricReport {
    std::string split;
    std::size_t n_real = 0, n_fake = 0;
    std::uint64_t seed = 0;
    std::string config_echo;
    std::vector<std::pair<std::string, StageMetrics>> stages;

    const StageMetrics* find(const std::string& stage) const {
        for (const auto& [name, m] : stages)
            if (name == stage) return &m;
        return nullptr;
    }
};

inline MetricReport make_report(const std::string& split, std::span<const PredictionBundle> bundles,
                                double clip = kDefaultLogLossClip) {
    MetricReport r;
    r.split = split;
    for (const auto& b : bundles) (b.label == 1 ? r.n_fake : r.n_real)++;

    auto add_stage = [&](const char* name, auto getter) {
        auto samples = stage_samples(bundles, getter);
        if (!samples.empty() && samples.size() == bundles.size())
            r.stages.emplace_back(name, stage_metrics(samples, clip));
    };
    add_stage("logit-mean", [](const PredictionBundle& b) { return std::optional<double>(b.p_logit_mean); });
    add_stage("afw", [](const PredictionBundle& b) { return std::optional<double>(b.p_w); });
    add_stage("gru", [](const PredictionBundle& b) { return std::optional<double>(b.p_rnn); });
    add_stage("afw+boost", [](const PredictionBundle& b) { return b.p_w_boost; });
    add_stage("gru+boost", [](const PredictionBundle& b) { return b.p_rnn_boost; });
    add_stage("gru+boost+tta", [](const PredictionBundle& b) { return b.p_tta; });
    return r;
}

}  // namespace dfdet
