#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "dfdet/facetrack.hpp"
#include "dfdet/image.hpp"
#include "dfdet/manifest.hpp"
#include "dfdet/rng.hpp"

// Synthetic face-track generator. Real videos are smooth procedural face-like
// textures with per-frame motion, lighting drift, blur and sensor noise.
// Fake videos additionally carry a localized manipulation: a warped copy of a
// face region blended back with a seam artifact, blur mismatch and a color
// shift. Its per-frame visibility follows a slow flicker curve, so evidence
// concentrates in contiguous stretches of frames while other stretches stay
// near-clean -- per-frame aggregation sees diluted evidence, sequence models
// see the structure. Everything is deterministic given the config seed.

namespace dfdet {

struct GeneratorConfig {
    int num_videos = 200;
    int frames_per_video = 300;
    double real_fake_ratio = 0.28;  // real : fake, as in "1 : 0.28"
    int patch_side = 64;            // echoed to the pipeline, not used when rendering
    double manipulation_strength = 0.6;  // in (0, 1]
    std::uint64_t seed = 1;
    int frame_side = 64;
    int sample_stride = 10;   // frames the detector sees; every written video covers these
    int neighbor_radius = 2;  // extra frames written around each sampled index

    void validate() const {
        if (num_videos < 1 || frames_per_video < 1 || patch_side < 1 || frame_side < 16 ||
            sample_stride < 1 || neighbor_radius < 0)
            throw ContractError("GeneratorConfig: counts must be positive");
        if (!(real_fake_ratio > 0)) throw ContractError("GeneratorConfig: ratio must be positive");
        if (!(manipulation_strength > 0) || manipulation_strength > 1)
            throw ContractError("GeneratorConfig: manipulation_strength must be in (0,1]");
    }
};

// Documented rounding rule: fake count = llround(n / (1 + ratio)).
inline int fake_video_count(int num_videos, double real_fake_ratio) {
    return static_cast<int>(std::llround(num_videos / (1.0 + real_fake_ratio)));
}

namespace gendetail {

struct VideoStyle {
    // face appearance
    double skin[3];
    double bg_a[3], bg_b[3];
    double bg_ripple_amp, bg_ripple_fx, bg_ripple_fy, bg_ripple_phase;
    double cx, cy, rx, ry;  // face ellipse (pixels)
    double eye_dx, eye_dy, eye_r;
    double mouth_dy, mouth_rx, mouth_ry;
    double tex_amp, tex_fx, tex_fy, tex_p1, tex_p2;
    // dynamics
    double move_ax, move_ay, move_wx, move_wy, move_px, move_py;
    double light_amp, light_w, light_p;
    double blur_prob;
    double noise_sigma;
    // manipulation (drawn for every video; applied only when m_eff > 0)
    double man_cx, man_cy;  // center offset in face-radius units
    double man_hw, man_hh;  // half size in face-radius units
    double warp_mag, warp_dir;
    double seam_amp, seam_sign;
    int shift_channel;
    double shift_amount;
    double blur_mix;
    double grain_amp, grain_fx, grain_fy, grain_p1, grain_p2;  // texture mismatch
    double flick_w, flick_p, flick_floor, flick_sharp;
};

inline VideoStyle draw_style(Rng& r, const GeneratorConfig& cfg) {
    VideoStyle s{};
    const double side = cfg.frame_side;
    for (int c = 0; c < 3; ++c) s.skin[c] = 0;
    s.skin[0] = r.uniform(185, 225);
    s.skin[1] = r.uniform(140, 180);
    s.skin[2] = r.uniform(115, 155);
    for (int c = 0; c < 3; ++c) {
        s.bg_a[c] = r.uniform(30, 110);
        s.bg_b[c] = r.uniform(60, 150);
    }
    s.bg_ripple_amp = r.uniform(2, 9);
    s.bg_ripple_fx = r.uniform(0.05, 0.25);
    s.bg_ripple_fy = r.uniform(0.05, 0.25);
    s.bg_ripple_phase = r.uniform(0, 6.283);
    s.cx = side * r.uniform(0.44, 0.56);
    s.cy = side * r.uniform(0.44, 0.56);
    s.rx = side * r.uniform(0.26, 0.34);
    s.ry = side * r.uniform(0.32, 0.42);
    s.eye_dx = r.uniform(0.35, 0.48);
    s.eye_dy = r.uniform(-0.38, -0.24);
    s.eye_r = r.uniform(0.14, 0.2);
    s.mouth_dy = r.uniform(0.42, 0.58);
    s.mouth_rx = r.uniform(0.35, 0.5);
    s.mouth_ry = r.uniform(0.1, 0.16);
    s.tex_amp = r.uniform(2, 7);
    s.tex_fx = r.uniform(0.2, 0.7);
    s.tex_fy = r.uniform(0.2, 0.7);
    s.tex_p1 = r.uniform(0, 6.283);
    s.tex_p2 = r.uniform(0, 6.283);
    s.move_ax = r.uniform(0.5, 2.2);
    s.move_ay = r.uniform(0.5, 2.2);
    s.move_wx = r.uniform(0.04, 0.2);
    s.move_wy = r.uniform(0.04, 0.2);
    s.move_px = r.uniform(0, 6.283);
    s.move_py = r.uniform(0, 6.283);
    s.light_amp = r.uniform(0.02, 0.1);
    s.light_w = r.uniform(0.01, 0.08);
    s.light_p = r.uniform(0, 6.283);
    s.blur_prob = r.uniform(0.1, 0.55);
    s.noise_sigma = r.uniform(1.5, 3.5);
    s.man_cx = r.uniform(-0.45, 0.45);
    s.man_cy = r.uniform(-0.35, 0.55);
    s.man_hw = r.uniform(0.3, 0.5);
    s.man_hh = r.uniform(0.22, 0.38);
    s.warp_mag = r.uniform(2.0, 3.5);
    s.warp_dir = r.uniform(0, 6.283);
    s.seam_amp = r.uniform(12, 22);
    s.seam_sign = r.bernoulli(0.5) ? 1.0 : -1.0;
    s.shift_channel = static_cast<int>(r.uniform_index(3));
    s.shift_amount = r.uniform(7, 14);
    s.blur_mix = r.uniform(0.3, 0.7);
    s.grain_amp = r.uniform(9, 16);
    s.grain_fx = r.uniform(0.9, 1.6);
    s.grain_fy = r.uniform(0.9, 1.6);
    s.grain_p1 = r.uniform(0, 6.283);
    s.grain_p2 = r.uniform(0, 6.283);
    s.flick_w = r.uniform(0.015, 0.06);  // slow: evidence comes in arcs
    s.flick_p = r.uniform(0, 6.283);
    s.flick_floor = r.uniform(0.3, 0.5);  // DEBUG-A
    s.flick_sharp = r.uniform(0.7, 1.8);
    return s;
}

// Per-frame manipulation visibility in [0, 1]; slow arcs with near-clean
// troughs.
inline double flicker(const VideoStyle& s, int t, double noise) {
    const double base = std::sin(s.flick_w * t + s.flick_p);
    const double arc = base > 0 ? std::pow(base, s.flick_sharp) : 0.0;
    const double v = s.flick_floor + (1.0 - s.flick_floor) * arc + noise;
    return std::clamp(v, 0.0, 1.0);
}

inline double smoothstep(double e0, double e1, double x) {
    const double u = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return u * u * (3 - 2 * u);
}

// Render one frame into float RGB; m_eff is the effective manipulation
// amplitude (0 renders the unmanipulated frame).
inline std::vector<double> render_float(const GeneratorConfig& cfg, const VideoStyle& s, int t,
                                        double m_eff) {
    const int W = cfg.frame_side, H = cfg.frame_side;
    std::vector<double> img(static_cast<std::size_t>(W) * H * 3);
    const double cx = s.cx + s.move_ax * std::sin(s.move_wx * t + s.move_px);
    const double cy = s.cy + s.move_ay * std::sin(s.move_wy * t + s.move_py);
    const double light = 1.0 + s.light_amp * std::sin(s.light_w * t + s.light_p);

    auto px = [&](int x, int y) { return img.data() + (static_cast<std::size_t>(y) * W + x) * 3; };

    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double* o = px(x, y);
            const double gmix = (x + y) / static_cast<double>(W + H);
            const double ripple =
                s.bg_ripple_amp * std::sin(s.bg_ripple_fx * x + s.bg_ripple_phase) *
                std::sin(s.bg_ripple_fy * y);
            for (int c = 0; c < 3; ++c) o[c] = s.bg_a[c] * (1 - gmix) + s.bg_b[c] * gmix + ripple;

            const double nx = (x - cx) / s.rx;
            const double ny = (y - cy) / s.ry;
            const double d = nx * nx + ny * ny;
            const double face_blend = 1.0 - smoothstep(0.85, 1.1, d);
            if (face_blend > 0) {
                const double shade = 1.0 - 0.22 * d;
                const double tex = s.tex_amp * std::sin(s.tex_fx * x + s.tex_p1) *
                                   std::sin(s.tex_fy * y + s.tex_p2);
                double face[3];
                for (int c = 0; c < 3; ++c) face[c] = s.skin[c] * shade + tex;

                // eyes with a sharp specular glint
                for (int e = -1; e <= 1; e += 2) {
                    const double ex = e * s.eye_dx * s.rx;
                    const double ey = s.eye_dy * s.ry;
                    const double er = s.eye_r * s.rx;
                    const double dx = x - cx - ex, dy = y - cy - ey;
                    const double ed = (dx * dx + dy * dy) / (er * er);
                    if (ed < 1.0) {
                        const double dark = 0.3 + 0.7 * smoothstep(0.55, 1.0, ed);
                        for (int c = 0; c < 3; ++c) face[c] *= dark;
                        const double gx = dx - 0.3 * er, gy = dy - 0.3 * er;
                        if (gx * gx + gy * gy < 0.04 * er * er)
                            for (int c = 0; c < 3; ++c) face[c] = 235;
                    }
                }
                // mouth
                {
                    const double mx = (x - cx) / (s.mouth_rx * s.rx);
                    const double my = (y - cy - s.mouth_dy * s.ry) / (s.mouth_ry * s.ry);
                    const double md = mx * mx + my * my;
                    if (md < 1.0) {
                        const double dark = 0.5 + 0.5 * smoothstep(0.4, 1.0, md);
                        for (int c = 0; c < 3; ++c) face[c] *= dark;
                    }
                }
                for (int c = 0; c < 3; ++c) o[c] = o[c] * (1 - face_blend) + face[c] * face_blend;
            }
            for (int c = 0; c < 3; ++c) o[c] *= light;
        }
    }

    if (m_eff > 0) {
        // Localized manipulation: warped self-copy, blur mismatch, color
        // shift, blended with a seam at the region border.
        const double mcx = cx + s.man_cx * s.rx;
        const double mcy = cy + s.man_cy * s.ry;
        const double hw = s.man_hw * s.rx;
        const double hh = s.man_hh * s.ry;
        const int x0 = std::max(0, static_cast<int>(std::floor(mcx - hw)));
        const int x1 = std::min(W - 1, static_cast<int>(std::ceil(mcx + hw)));
        const int y0 = std::max(0, static_cast<int>(std::floor(mcy - hh)));
        const int y1 = std::min(H - 1, static_cast<int>(std::ceil(mcy + hh)));
        const double wdx = m_eff * s.warp_mag * std::cos(s.warp_dir);
        const double wdy = m_eff * s.warp_mag * std::sin(s.warp_dir);
        const double alpha = std::clamp(1.2 * m_eff, 0.0, 1.0);

        auto sample = [&](double fx, double fy, int c) {
            fx = std::clamp(fx, 0.0, W - 1.0);
            fy = std::clamp(fy, 0.0, H - 1.0);
            const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
            const int ix1 = std::min(ix + 1, W - 1), iy1 = std::min(iy + 1, H - 1);
            const double ux = fx - ix, uy = fy - iy;
            return (1 - uy) * ((1 - ux) * px(ix, iy)[c] + ux * px(ix1, iy)[c]) +
                   uy * ((1 - ux) * px(ix, iy1)[c] + ux * px(ix1, iy1)[c]);
        };

        std::vector<double> patch(static_cast<std::size_t>(x1 - x0 + 1) * (y1 - y0 + 1) * 3);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                double* o = patch.data() + (static_cast<std::size_t>(y - y0) * (x1 - x0 + 1) + (x - x0)) * 3;
                // texture mismatch of the inserted patch vs the face texture
                const double grain = s.grain_amp * std::sin(s.grain_fx * x + s.grain_p1) *
                                     std::sin(s.grain_fy * y + s.grain_p2);
                for (int c = 0; c < 3; ++c) {
                    const double warped = sample(x + wdx, y + wdy, c);
                    double blur = 0;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx)
                            blur += sample(x + wdx + dx, y + wdy + dy, c);
                    blur /= 9.0;
                    double v = warped * (1 - m_eff * s.blur_mix) + blur * (m_eff * s.blur_mix);
                    v += m_eff * grain;
                    if (c == s.shift_channel) v += m_eff * s.shift_amount;
                    o[c] = v;
                }
            }
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double* src =
                    patch.data() + (static_cast<std::size_t>(y - y0) * (x1 - x0 + 1) + (x - x0)) * 3;
                double* o = px(x, y);
                for (int c = 0; c < 3; ++c) o[c] = o[c] * (1 - alpha) + src[c] * alpha;
                // solid 2-px seam ring; a constant step survives resampling
                const bool border = (x - x0 < 2) || (x1 - x < 2) || (y - y0 < 2) || (y1 - y < 2);
                if (border)
                    for (int c = 0; c < 3; ++c) o[c] += s.seam_sign * s.seam_amp * m_eff;
            }
    }
    return img;
}

inline Image8 quantize(const std::vector<double>& img, int W, int H) {
    Image8 out(W, H);
    for (std::size_t i = 0; i < img.size(); ++i)
        out.px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img[i], 0.0, 255.0)));
    return out;
}

// Face bounding box with small detector-like jitter, clamped to the frame.
inline BBox face_box(const GeneratorConfig& cfg, const VideoStyle& s, double cx, double cy, Rng& r) {
    const double jx = r.uniform(-1.5, 1.5), jy = r.uniform(-1.5, 1.5);
    const double jw = r.uniform(-1.5, 1.5), jh = r.uniform(-1.5, 1.5);
    int x0 = static_cast<int>(std::lround(cx - 1.12 * s.rx + jx));
    int y0 = static_cast<int>(std::lround(cy - 1.08 * s.ry + jy));
    int x1 = static_cast<int>(std::lround(cx + 1.12 * s.rx + jw));
    int y1 = static_cast<int>(std::lround(cy + 1.08 * s.ry + jh));
    x0 = std::clamp(x0, 0, cfg.frame_side - 2);
    y0 = std::clamp(y0, 0, cfg.frame_side - 2);
    x1 = std::clamp(x1, x0 + 1, cfg.frame_side - 1);
    y1 = std::clamp(y1, y0 + 1, cfg.frame_side - 1);
    return BBox{x0, y0, x1 - x0, y1 - y0};
}

}  // namespace gendetail

// Writes frames (PPM) and the manifest under out_dir, returns the manifest.
// Frames written per video: every sampled index plus neighbor_radius frames
// on each side (what test-time augmentation shifts into). Detector boxes are
// attached to sampled indices only.
inline Manifest generate_synthetic_dataset(const GeneratorConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("generate_synthetic_dataset: cannot create " + out_dir + ": " + ec.message());

    const int n_fake = fake_video_count(cfg.num_videos, cfg.real_fake_ratio);
    const double ffrac = static_cast<double>(n_fake) / cfg.num_videos;

    // Frame indices to materialize.
    std::vector<int> want;
    for (int base = 0; base < cfg.frames_per_video; base += cfg.sample_stride)
        for (int o = -cfg.neighbor_radius; o <= cfg.neighbor_radius; ++o) {
            const int idx = base + o;
            if (idx >= 0 && idx < cfg.frames_per_video) want.push_back(idx);
        }
    std::sort(want.begin(), want.end());
    want.erase(std::unique(want.begin(), want.end()), want.end());

    Rng root(cfg.seed);
    Manifest manifest;
    int class_counter[2] = {0, 0};
    for (int v = 0; v < cfg.num_videos; ++v) {
        // Bresenham interleave gives exact label counts; splits go
        // round-robin within each class (3 train : 1 val : 1 test), so every
        // split is populated by both classes once a class has 5+ videos.
        const bool is_fake =
            static_cast<int>(std::floor((v + 1) * ffrac)) - static_cast<int>(std::floor(v * ffrac)) == 1;
        Rng vr = root.fork(static_cast<std::uint64_t>(v) + 1);
        gendetail::VideoStyle style = gendetail::draw_style(vr, cfg);

        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "vid_%04d", v);
        VideoRecord rec;
        rec.video_id = idbuf;
        rec.label = is_fake ? Label::fake : Label::real;
        const int k = class_counter[is_fake ? 1 : 0]++;
        rec.split = (k % 5 <= 2) ? Split::train : (k % 5 == 3 ? Split::val : Split::test);
        rec.total_frames = cfg.frames_per_video;

        const fs::path vdir = fs::path(out_dir) / rec.video_id;
        fs::create_directories(vdir, ec);
        if (ec) throw IoError("generate_synthetic_dataset: cannot create " + vdir.string());

        for (int t : want) {
            Rng fr = vr.fork(static_cast<std::uint64_t>(t) + 7);
            const double flick_noise = fr.normal(0, 0.06);
            const double m_eff =
                is_fake ? cfg.manipulation_strength * gendetail::flicker(style, t, flick_noise) : 0.0;
            std::vector<double> img = gendetail::render_float(cfg, style, t, m_eff);

            // per-frame blur then sensor noise
            Image8 frame = gendetail::quantize(img, cfg.frame_side, cfg.frame_side);
            int blur_r = 0;
            if (fr.bernoulli(style.blur_prob)) blur_r = fr.bernoulli(0.5) ? 1 : 2;
            if (blur_r > 0) frame = box_blur(frame, blur_r);
            for (auto& b : frame.px) {
                const double noisy = b + fr.normal(0, style.noise_sigma);
                b = static_cast<std::uint8_t>(std::lround(std::clamp(noisy, 0.0, 255.0)));
            }

            char fbuf[32];
            std::snprintf(fbuf, sizeof(fbuf), "f_%06d.ppm", t);
            const fs::path fpath = vdir / fbuf;
            write_ppm(fpath.string(), frame);

            FrameEntry entry;
            entry.frame_index = t;
            entry.image = (fs::path(rec.video_id) / fbuf).generic_string();
            if (t % cfg.sample_stride == 0) {
                const double fcx = style.cx + style.move_ax * std::sin(style.move_wx * t + style.move_px);
                const double fcy = style.cy + style.move_ay * std::sin(style.move_wy * t + style.move_py);
                entry.boxes.push_back(gendetail::face_box(cfg, style, fcx, fcy, fr));
            }
            rec.frames.push_back(std::move(entry));
        }
        manifest.records.push_back(std::move(rec));
    }
    save_manifest((fs::path(out_dir) / "manifest.txt").string(), manifest);
    return manifest;
}

}  // namespace dfdet
