#pragma once

#include <algorithm>
#include <filesystem>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "dfdet/image.hpp"
#include "dfdet/manifest.hpp"

// Face-track ingestion: frame sampling, margin-expanded face crops, and the
// pluggable boxes-per-frame provider that stands in for a face detector.

namespace dfdet {

// Indices {0, stride, 2*stride, ...} below total_frames.
inline std::vector<int> sample_frames(int total_frames, int stride) {
    if (total_frames < 1) throw ContractError("sample_frames: total_frames must be >= 1");
    if (stride < 1) throw ContractError("sample_frames: stride must be >= 1");
    std::vector<int> out;
    for (int i = 0; i < total_frames; i += stride) out.push_back(i);
    return out;
}

// Expand the box by margin_px on every side, clip to the frame, crop and
// resize to out_side x out_side.
inline Image8 crop_face(const Image8& frame, BBox box, int margin_px, int out_side) {
    if (out_side < 1) throw ContractError("crop_face: out_side must be >= 1");
    if (margin_px < 0) throw ContractError("crop_face: negative margin");
    const int x0 = std::max(box.x - margin_px, 0);
    const int y0 = std::max(box.y - margin_px, 0);
    const int x1 = std::min(box.x + box.w + margin_px, frame.width);
    const int y1 = std::min(box.y + box.h + margin_px, frame.height);
    if (x0 >= x1 || y0 >= y1)
        throw ContractError("crop_face: box entirely outside the frame");
    Image8 region(x1 - x0, y1 - y0);
    for (int y = y0; y < y1; ++y)
        std::copy(frame.at(x0, y), frame.at(x0, y) + static_cast<std::size_t>(x1 - x0) * 3,
                  region.at(0, y - y0));
    return bilinear_resize(region, out_side, out_side);
}

// Map a box detected on a downscaled frame back to original coordinates.
inline BBox rescale_box(BBox b, int factor) {
    return BBox{b.x * factor, b.y * factor, b.w * factor, b.h * factor};
}

// Detector abstraction: frames in, boxes out. The default provider replays
// boxes stored in the manifest (the synthetic generator emits ground truth).
class FaceBoxProvider {
public:
    virtual ~FaceBoxProvider() = default;
    virtual std::vector<BBox> boxes(const VideoRecord& video, int frame_index) const = 0;
};

class ManifestBoxProvider final : public FaceBoxProvider {
public:
    std::vector<BBox> boxes(const VideoRecord& video, int frame_index) const override {
        const FrameEntry* f = video.find_frame(frame_index);
        return f ? f->boxes : std::vector<BBox>{};
    }
};

struct FacePatch {
    int frame_index = 0;  // the sampled (base) frame index
    BBox source_box;
    Image8 image;
};

struct FaceTrack {
    std::string video_id;
    Label label = Label::real;
    int side = 0;
    std::vector<FacePatch> patches;
};

// Caches decoded frames; ingestion touches the same file once per process.
class FrameCache {
public:
    explicit FrameCache(std::string root) : root_(std::move(root)) {}

    const Image8& get(const std::string& rel_path) {
        auto it = cache_.find(rel_path);
        if (it != cache_.end()) return it->second;
        auto img = read_ppm((std::filesystem::path(root_) / rel_path).string());
        return cache_.emplace(rel_path, std::move(img)).first->second;
    }

    void clear() { cache_.clear(); }
    const std::string& root() const { return root_; }

private:
    std::string root_;
    std::unordered_map<std::string, Image8> cache_;
};

struct TrackOptions {
    int stride = 10;
    int margin_px = 6;
    int patch_side = 64;
    int frame_offset = 0;  // shift applied to pixel lookup, clamped to bounds
    bool flip = false;
};

// Build the model input for one video: for every sampled frame, each detected
// box becomes one patch, ordered by (frame_index, box x). With frame_offset
// set, boxes stay those of the base frame but pixels come from the shifted
// frame (clamped at the ends). A video whose sampled frames carry no boxes
// yields an empty track; callers decide the no-face policy.
inline FaceTrack build_track(const VideoRecord& video, FrameCache& frames, const FaceBoxProvider& provider,
                             const TrackOptions& opt) {
    FaceTrack track;
    track.video_id = video.video_id;
    track.label = video.label;
    track.side = opt.patch_side;
    for (int base : sample_frames(video.total_frames, opt.stride)) {
        std::vector<BBox> boxes = provider.boxes(video, base);
        if (boxes.empty()) continue;
        std::sort(boxes.begin(), boxes.end(), [](const BBox& a, const BBox& b) { return a.x < b.x; });
        const int shifted = std::clamp(base + opt.frame_offset, 0, video.total_frames - 1);
        const FrameEntry* entry = video.find_frame(shifted);
        if (!entry)
            throw IoError("build_track: video '" + video.video_id + "' has no frame entry for index " +
                          std::to_string(shifted));
        const Image8& frame = frames.get(entry->image);
        for (const BBox& b : boxes) {
            FacePatch p;
            p.frame_index = base;
            p.source_box = b;
            p.image = crop_face(frame, b, opt.margin_px, opt.patch_side);
            if (opt.flip) p.image = flip_horizontal(p.image);
            track.patches.push_back(std::move(p));
        }
    }
    return track;
}

// Dataset handle shared by training, boosting and inference: manifest plus
// frame cache plus crop geometry, with memoized baseline tracks.
class TrackStore {
public:
    TrackStore(const Manifest& manifest, std::string data_root, TrackOptions opt)
        : manifest_(&manifest), frames_(std::move(data_root)), opt_(opt) {}

    const Manifest& manifest() const { return *manifest_; }
    const TrackOptions& options() const { return opt_; }
    FrameCache& frames() { return frames_; }

    // Baseline track (no offset, no flip); cached per video.
    const FaceTrack& track(const VideoRecord& rec) {
        auto it = cache_.find(rec.video_id);
        if (it != cache_.end()) return it->second;
        return cache_.emplace(rec.video_id, build_track(rec, frames_, boxes_, opt_)).first->second;
    }

    FaceTrack track_with(const VideoRecord& rec, int frame_offset, bool flip) {
        TrackOptions o = opt_;
        o.frame_offset = frame_offset;
        o.flip = flip;
        return build_track(rec, frames_, boxes_, o);
    }

private:
    const Manifest* manifest_;
    FrameCache frames_;
    ManifestBoxProvider boxes_;
    TrackOptions opt_;
    std::unordered_map<std::string, FaceTrack> cache_;
};

}  // namespace dfdet
