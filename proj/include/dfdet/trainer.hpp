#pragma once

#include <ctime>
#include <limits>
#include <optional>
#include <ostream>

#include "dfdet/metrics.hpp"
#include "dfdet/sampler.hpp"
#include "dfdet/tta.hpp"

// End-to-end training: one video at a time, BCE gradients on the
// face-weighted and sequence outputs accumulated and applied every
// videos_per_update videos, with an independently accumulated ArcFace stream
// stepped every frames_per_arcface_update random crops. Loss routing is
// structural: each loss graph only reaches the parameters it may update, so
// ArcFace never touches the AFW heads or the GRU, and BCE(p_w) never touches
// the GRU.

namespace dfdet {

class TrainAbort : public Error {
public:
    using Error::Error;
};

template <class T>
struct TrainConfig {
    T lr = T(0.001);
    T beta1 = T(0.9), beta2 = T(0.999), adam_eps = T(1e-8);
    int videos_per_update = 64;
    int frames_per_arcface_update = 256;
    int warmup_arcface_batches = 2000;  // desk-scale experiments override this
    int arc_batch_size = 32;
    int arc_crops_per_video = 2;
    int max_videos = 1000;  // video iterations of the joint loop
    int checkpoint_every = 500;
    std::uint64_t seed = 1;
    bool use_arcface = true;
    bool use_bce_pw = true;
    bool use_bce_prnn = true;
    bool deterministic = true;  // zeroed log timestamps, reproducible streams
    int max_track_patches = 0;  // 0 = full track; else a random window per visit
    std::string config_echo = "{}";
    std::string snapshot_path;  // diagnostic checkpoint target on NaN abort

    void validate() const {
        if (!(lr > T(0))) throw ContractError("TrainConfig: lr must be positive");
        if (videos_per_update < 1 || frames_per_arcface_update < 1 || arc_batch_size < 1 ||
            arc_crops_per_video < 0 || max_videos < 0 || checkpoint_every < 1 ||
            warmup_arcface_batches < 0 || max_track_patches < 0)
            throw ContractError("TrainConfig: counts must be positive");
    }
};

namespace trainerdetail {

// Class-balanced when both classes are present; degrades to uniform sampling
// on single-class splits (the overfit-one-video path) instead of refusing.
class TrainSampler {
public:
    TrainSampler(const Manifest& manifest, Split split, Rng rng) : rng_(rng) {
        for (const auto& r : manifest.records) {
            if (r.split != split) continue;
            (r.label == Label::real ? reals_ : fakes_).push_back(&r);
        }
        if (reals_.empty() && fakes_.empty())
            throw ContractError(std::string("TrainSampler: split '") + to_string(split) + "' is empty");
    }

    const VideoRecord* next() {
        if (reals_.empty()) return fakes_[rng_.uniform_index(fakes_.size())];
        if (fakes_.empty()) return reals_[rng_.uniform_index(reals_.size())];
        const auto& pool = rng_.bernoulli(0.5) ? fakes_ : reals_;
        return pool[rng_.uniform_index(pool.size())];
    }

private:
    std::vector<const VideoRecord*> reals_;
    std::vector<const VideoRecord*> fakes_;
    Rng rng_;
};

}  // namespace trainerdetail

// Per-loss gradient buffers, aligned with a parameter list. Node gradients
// are drained here right after each backward pass so the two update cadences
// never mix gradients.
template <class T>
class GradAccumulator {
public:
    explicit GradAccumulator(const std::vector<Var<T>>& params) {
        buffers_.reserve(params.size());
        for (const auto& p : params) buffers_.emplace_back(p->value.shape());
    }

    void drain(const std::vector<Var<T>>& params) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!params[i]->has_grad()) continue;
            accumulate(buffers_[i], params[i]->grad);
            params[i]->zero_grad();
        }
    }

    void clear() {
        for (auto& b : buffers_) b.fill(T(0));
    }

    const std::vector<Tensor<T>>& grads() const { return buffers_; }

private:
    std::vector<Tensor<T>> buffers_;
};

// Full evaluation pass: per-video stage probabilities (plus boosted and TTA
// variants when available). Videos without any detected face score 0.5 with
// the no-face flag.
template <class T>
std::vector<PredictionBundle> evaluate_split(const DetectorModel<T>& model, const DetectorModel<T>* boost,
                                             TrackStore& store, Split split,
                                             const TtaConfig* tta_cfg = nullptr) {
    const auto videos = store.manifest().split_videos(split);
    if (videos.empty()) throw ContractError("evaluate_split: empty split");
    std::vector<PredictionBundle> out;
    out.reserve(videos.size());
    for (const VideoRecord* rec : videos) {
        PredictionBundle b;
        b.video_id = rec->video_id;
        b.label = rec->label == Label::fake ? 1 : 0;
        const FaceTrack& track = store.track(*rec);
        if (track.patches.empty()) {
            b.no_face = true;
            out.push_back(std::move(b));
            continue;
        }
        NoGrad ng;
        auto mo = model.forward_input(model.track_to_input(track));
        b.p_logit_mean = static_cast<double>(mo.p_logit_mean());
        b.p_w = static_cast<double>(mo.p_w());
        b.p_rnn = static_cast<double>(mo.p_rnn());
        if (boost) {
            auto bo = boost->forward_input(boost->track_to_input(track));
            auto c = combine_outputs(mo, bo, model.config().afw_eps);
            b.p_w_boost = static_cast<double>(c.p_w_b);
            b.p_rnn_boost = static_cast<double>(c.p_rnn_b);
        }
        if (tta_cfg && tta_cfg->enabled)
            b.p_tta = tta_predict(model, boost, build_tta_sequences(*rec, store, *tta_cfg),
                                  tta_cfg->average_logits);
        out.push_back(std::move(b));
    }
    return out;
}

template <class T>
struct TrainStats {
    int videos_processed = 0;
    int bce_updates = 0;
    int arc_updates = 0;
    int warmup_batches = 0;
    double last_bce_pw = 0;
    double last_bce_prnn = 0;
    double last_arc = 0;
    double best_val_logloss = std::numeric_limits<double>::infinity();
};

template <class T>
class Trainer {
public:
    Trainer(DetectorModel<T>& model, TrackStore& store, TrainConfig<T> cfg, std::ostream* log = nullptr)
        : model_(model),
          store_(store),
          cfg_(std::move(cfg)),
          log_(log),
          rng_(cfg_.seed),
          params_(model.params().vars()),
          adam_(make_adam_state(params_, cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.adam_eps)),
          acc_bce_(params_),
          acc_arc_(params_) {
        cfg_.validate();
    }

    // Per-channel mean/std over training crops (after the [0,1] scaling);
    // stored on the model so checkpoints carry it.
    void estimate_normalization(std::size_t max_patches = 256) {
        double sum[3] = {0, 0, 0}, sumsq[3] = {0, 0, 0};
        std::size_t count = 0;
        for (const VideoRecord* rec : store_.manifest().split_videos(Split::train)) {
            for (const FacePatch& p : store_.track(*rec).patches) {
                const std::size_t n = p.image.px.size() / 3;
                for (std::size_t i = 0; i < n; ++i)
                    for (int c = 0; c < 3; ++c) {
                        const double v = p.image.px[i * 3 + c] / 255.0;
                        sum[c] += v;
                        sumsq[c] += v * v;
                    }
                if (++count >= max_patches) break;
            }
            if (count >= max_patches) break;
        }
        if (count == 0) throw ContractError("estimate_normalization: no training patches");
        std::array<T, 3> mean, stddev;
        const std::size_t side = store_.options().patch_side;
        const double n = static_cast<double>(count * side * side);
        for (int c = 0; c < 3; ++c) {
            const double m = sum[c] / n;
            const double var = std::max(sumsq[c] / n - m * m, 1e-6);
            mean[c] = static_cast<T>(m);
            stddev[c] = static_cast<T>(std::sqrt(var));
        }
        model_.set_normalization(mean, stddev);
    }

    // ArcFace-only initialization of the backbone; the AFW heads and the GRU
    // are untouched by construction.
    void warmup_arcface() {
        if (cfg_.warmup_arcface_batches == 0) return;
        trainerdetail::TrainSampler sampler(store_.manifest(), Split::train, rng_.fork(101));
        for (int b = 0; b < cfg_.warmup_arcface_batches; ++b) {
            std::vector<const Image8*> batch;
            std::vector<std::size_t> labels;
            fill_arc_batch(sampler, cfg_.arc_batch_size, batch, labels);
            const double loss = arc_step_on(batch, labels, /*apply_update=*/true);
            stats_.last_arc = loss;
            ++stats_.warmup_batches;
            log_line("arc_warmup", b, loss);
        }
    }

    TrainStats<T> train() {
        trainerdetail::TrainSampler video_sampler(store_.manifest(), Split::train, rng_.fork(202));
        trainerdetail::TrainSampler crop_sampler(store_.manifest(), Split::train, rng_.fork(303));

        std::vector<const Image8*> arc_batch;
        std::vector<std::size_t> arc_labels;
        int arc_frames = 0;
        const bool any_bce = cfg_.use_bce_pw || cfg_.use_bce_prnn;

        for (int v = 0; v < cfg_.max_videos; ++v) {
            const VideoRecord* rec = video_sampler.next();
            const FaceTrack& track = store_.track(*rec);
            if (track.patches.empty()) continue;
            const T y = rec->label == Label::fake ? T(1) : T(0);

            try {
                if (any_bce) {
                    auto out = model_.forward_input(training_input(track));
                    if (cfg_.use_bce_pw) {
                        auto loss = bce_with_logits(out.afw_logit, Tensor<T>::scalar(y));
                        stats_.last_bce_pw = check_finite_loss(loss, "bce_pw", rec->video_id);
                        backward(loss);
                        log_line("bce_pw", v, stats_.last_bce_pw);
                    }
                    if (cfg_.use_bce_prnn) {
                        auto loss = bce_with_logits(out.gru_logit, Tensor<T>({1}, y));
                        stats_.last_bce_prnn = check_finite_loss(loss, "bce_prnn", rec->video_id);
                        backward(loss);
                        log_line("bce_prnn", v, stats_.last_bce_prnn);
                    }
                    acc_bce_.drain(params_);
                }

                if (cfg_.use_arcface) {
                    fill_arc_batch(crop_sampler, cfg_.arc_crops_per_video, arc_batch, arc_labels);
                    if (static_cast<int>(arc_batch.size()) >= cfg_.arc_batch_size) {
                        stats_.last_arc = arc_step_on(arc_batch, arc_labels, /*apply_update=*/false);
                        arc_frames += static_cast<int>(arc_batch.size());
                        log_line("arcface", v, stats_.last_arc);
                        arc_batch.clear();
                        arc_labels.clear();
                    }
                }
            } catch (const NumericFault& e) {
                abort_with_snapshot(e.what(), rec->video_id);
            }

            ++stats_.videos_processed;
            if (any_bce && (v + 1) % cfg_.videos_per_update == 0) {
                adam_step(params_, acc_bce_.grads(), adam_);
                acc_bce_.clear();
                ++stats_.bce_updates;
            }
            if (cfg_.use_arcface && arc_frames >= cfg_.frames_per_arcface_update) {
                adam_step(params_, acc_arc_.grads(), adam_);
                acc_arc_.clear();
                arc_frames = 0;
                ++stats_.arc_updates;
            }
            if ((v + 1) % cfg_.checkpoint_every == 0 || v + 1 == cfg_.max_videos) consider_checkpoint();
        }
        if (!best_ck_) best_ck_ = model_.to_checkpoint(cfg_.config_echo);
        return stats_;
    }

    const TrainStats<T>& stats() const { return stats_; }

    // Best-on-validation parameters (falls back to final when there is no
    // usable validation split).
    const Checkpoint<T>& best_checkpoint() const {
        if (!best_ck_) throw ContractError("best_checkpoint: train() has not run");
        return *best_ck_;
    }

private:
    Tensor<T> training_input(const FaceTrack& track) {
        const int n = static_cast<int>(track.patches.size());
        int lo = 0, hi = n;
        if (cfg_.max_track_patches > 0 && n > cfg_.max_track_patches) {
            lo = static_cast<int>(rng_.uniform_index(n - cfg_.max_track_patches + 1));
            hi = lo + cfg_.max_track_patches;
        }
        std::vector<const Image8*> ptrs;
        ptrs.reserve(hi - lo);
        for (int i = lo; i < hi; ++i) ptrs.push_back(&track.patches[i].image);
        return model_.patches_to_input(ptrs);
    }

    void fill_arc_batch(trainerdetail::TrainSampler& sampler, int count, std::vector<const Image8*>& batch,
                        std::vector<std::size_t>& labels) {
        for (int k = 0; k < count; ++k) {
            const VideoRecord* rec = sampler.next();
            const FaceTrack& track = store_.track(*rec);
            if (track.patches.empty()) continue;
            const std::size_t pi = rng_.uniform_index(track.patches.size());
            batch.push_back(&track.patches[pi].image);
            labels.push_back(rec->label == Label::fake ? 1 : 0);
        }
    }

    double arc_step_on(const std::vector<const Image8*>& batch, const std::vector<std::size_t>& labels,
                       bool apply_update) {
        if (batch.empty()) return 0;
        auto feats = model_.extract_features(make_constant(model_.patches_to_input(batch)));
        auto loss = model_.arcface(feats, labels);
        const double value = check_finite_loss(loss, "arcface", "");
        backward(loss);
        acc_arc_.drain(params_);
        if (apply_update) {
            adam_step(params_, acc_arc_.grads(), adam_);
            acc_arc_.clear();
            ++stats_.arc_updates;
        }
        return value;
    }

    double check_finite_loss(const Var<T>& loss, const char* name, const std::string& video_id) {
        const double v = static_cast<double>(loss->value[0]);
        if (!std::isfinite(v)) abort_with_snapshot(std::string(name) + " is non-finite", video_id);
        return v;
    }

    [[noreturn]] void abort_with_snapshot(const std::string& why, const std::string& video_id) {
        std::string where;
        if (!cfg_.snapshot_path.empty()) {
            save_checkpoint(cfg_.snapshot_path, model_.to_checkpoint(cfg_.config_echo));
            where = "; diagnostic snapshot written to " + cfg_.snapshot_path;
        }
        throw TrainAbort("training aborted: " + why +
                         (video_id.empty() ? "" : " (video " + video_id + ")") + where);
    }

    void consider_checkpoint() {
        const auto val_videos = store_.manifest().split_videos(Split::val);
        if (val_videos.empty()) {
            best_ck_ = model_.to_checkpoint(cfg_.config_echo);
            return;
        }
        auto bundles = evaluate_split<T>(model_, nullptr, store_, Split::val);
        auto samples = stage_samples(std::span<const PredictionBundle>(bundles),
                                     [](const PredictionBundle& b) { return std::optional<double>(b.p_rnn); });
        const double ll = log_loss(samples);
        log_line("val_logloss", stats_.videos_processed, ll);
        if (ll < stats_.best_val_logloss) {
            stats_.best_val_logloss = ll;
            best_ck_ = model_.to_checkpoint(cfg_.config_echo);
        }
    }

    void log_line(const char* loss_name, int step, double value) {
        if (!log_) return;
        const long ts = cfg_.deterministic ? 0 : static_cast<long>(::time(nullptr));
        (*log_) << "{\"step\":" << step << ",\"loss\":\"" << loss_name << "\",\"value\":" << value
                << ",\"timestamp\":" << ts << "}\n";
    }

    DetectorModel<T>& model_;
    TrackStore& store_;
    TrainConfig<T> cfg_;
    std::ostream* log_;
    Rng rng_;
    std::vector<Var<T>> params_;
    AdamState<T> adam_;
    GradAccumulator<T> acc_bce_;
    GradAccumulator<T> acc_arc_;
    TrainStats<T> stats_;
    std::optional<Checkpoint<T>> best_ck_;
};

}  // namespace dfdet
