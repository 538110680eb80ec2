#pragma once

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "dfdet/common.hpp"

// Dataset manifest: one video record per line.
//
//   video_id <TAB> label <TAB> split <TAB> total_frames <TAB> frames
//   frames   := entry (';' entry)*
//   entry    := frame_index '|' image_ref '|' [box (' ' box)*]
//   box      := x ',' y ',' w ',' h          (original-frame pixels)
//
// label is "real" or "fake"; split is "train", "val" or "test". Malformed
// rows are rejected with their line number, never repaired.

namespace dfdet {

enum class Label { real, fake };
enum class Split { train, val, test };

inline const char* to_string(Label l) { return l == Label::real ? "real" : "fake"; }
inline const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        default: return "test";
    }
}

inline Label parse_label(const std::string& s) {
    if (s == "real") return Label::real;
    if (s == "fake") return Label::fake;
    throw IoError("unknown label '" + s + "'");
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw IoError("unknown split '" + s + "'");
}

struct BBox {
    int x = 0, y = 0, w = 0, h = 0;
    bool operator==(const BBox&) const = default;
};

struct FrameEntry {
    int frame_index = 0;
    std::string image;  // path relative to the manifest's directory
    std::vector<BBox> boxes;
    bool operator==(const FrameEntry&) const = default;
};

struct VideoRecord {
    std::string video_id;
    Label label = Label::real;
    Split split = Split::train;
    int total_frames = 0;
    std::vector<FrameEntry> frames;

    const FrameEntry* find_frame(int index) const {
        for (const auto& f : frames)
            if (f.frame_index == index) return &f;
        return nullptr;
    }
    bool operator==(const VideoRecord&) const = default;
};

struct Manifest {
    std::vector<VideoRecord> records;

    const VideoRecord* find(const std::string& video_id) const {
        for (const auto& r : records)
            if (r.video_id == video_id) return &r;
        return nullptr;
    }

    std::vector<const VideoRecord*> split_videos(Split s) const {
        std::vector<const VideoRecord*> out;
        for (const auto& r : records)
            if (r.split == s) out.push_back(&r);
        return out;
    }
    bool operator==(const Manifest&) const = default;
};

namespace manifestdetail {

inline std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(s.substr(start));
            break;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline int parse_int(const std::string& s, const char* what) {
    if (s.empty()) throw IoError(std::string("empty ") + what);
    std::size_t used = 0;
    int v;
    try {
        v = std::stoi(s, &used);
    } catch (const std::exception&) {
        throw IoError(std::string("bad ") + what + " '" + s + "'");
    }
    if (used != s.size()) throw IoError(std::string("bad ") + what + " '" + s + "'");
    return v;
}

inline FrameEntry parse_frame_entry(const std::string& text) {
    const auto fields = split_on(text, '|');
    if (fields.size() != 3) throw IoError("frame entry needs 3 '|' fields: '" + text + "'");
    FrameEntry e;
    e.frame_index = parse_int(fields[0], "frame index");
    if (e.frame_index < 0) throw IoError("negative frame index");
    e.image = fields[1];
    if (e.image.empty()) throw IoError("empty image reference");
    if (!fields[2].empty()) {
        for (const auto& btxt : split_on(fields[2], ' ')) {
            const auto nums = split_on(btxt, ',');
            if (nums.size() != 4) throw IoError("box needs x,y,w,h: '" + btxt + "'");
            BBox b{parse_int(nums[0], "box x"), parse_int(nums[1], "box y"), parse_int(nums[2], "box w"),
                   parse_int(nums[3], "box h")};
            if (b.w <= 0 || b.h <= 0) throw IoError("box with non-positive extent: '" + btxt + "'");
            e.boxes.push_back(b);
        }
    }
    return e;
}

}  // namespace manifestdetail

inline Manifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("load_manifest: cannot open " + path);
    Manifest m;
    std::unordered_set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto fields = manifestdetail::split_on(line, '\t');
            if (fields.size() != 5) throw IoError("expected 5 tab-separated fields");
            VideoRecord r;
            r.video_id = fields[0];
            if (r.video_id.empty()) throw IoError("empty video_id");
            r.label = parse_label(fields[1]);
            r.split = parse_split(fields[2]);
            r.total_frames = manifestdetail::parse_int(fields[3], "total_frames");
            if (r.total_frames < 1) throw IoError("total_frames must be >= 1");
            for (const auto& etxt : manifestdetail::split_on(fields[4], ';'))
                r.frames.push_back(manifestdetail::parse_frame_entry(etxt));
            if (r.frames.empty()) throw IoError("record has no frame entries");
            for (std::size_t i = 0; i < r.frames.size(); ++i) {
                if (r.frames[i].frame_index >= r.total_frames)
                    throw IoError("frame index beyond total_frames");
                if (i > 0 && r.frames[i].frame_index <= r.frames[i - 1].frame_index)
                    throw IoError("frame indices not strictly increasing");
            }
            if (!seen.insert(r.video_id).second) throw IoError("duplicate video_id '" + r.video_id + "'");
            m.records.push_back(std::move(r));
        } catch (const IoError& e) {
            throw IoError("load_manifest: " + path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (m.records.empty()) throw IoError("load_manifest: empty manifest: " + path);
    return m;
}

inline void save_manifest(const std::string& path, const Manifest& m) {
    std::ofstream os(path);
    if (!os) throw IoError("save_manifest: cannot open " + path);
    for (const auto& r : m.records) {
        os << r.video_id << '\t' << to_string(r.label) << '\t' << to_string(r.split) << '\t' << r.total_frames
           << '\t';
        for (std::size_t i = 0; i < r.frames.size(); ++i) {
            const auto& f = r.frames[i];
            if (i) os << ';';
            os << f.frame_index << '|' << f.image << '|';
            for (std::size_t b = 0; b < f.boxes.size(); ++b) {
                if (b) os << ' ';
                os << f.boxes[b].x << ',' << f.boxes[b].y << ',' << f.boxes[b].w << ',' << f.boxes[b].h;
            }
        }
        os << '\n';
    }
    if (!os) throw IoError("save_manifest: write failed " + path);
}

}  // namespace dfdet
