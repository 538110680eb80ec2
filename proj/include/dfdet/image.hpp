#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "dfdet/common.hpp"

// 8-bit RGB raster images with PPM (P6) file IO, bilinear resize, box
// downscale, horizontal flip and box blur. Everything the ingestion path and
// the synthetic generator need; no external imaging dependency.

namespace dfdet {

struct Image8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> px;  // interleaved RGB, row-major

    Image8() = default;
    Image8(int w, int h) : width(w), height(h), px(static_cast<std::size_t>(w) * h * 3, 0) {}

    std::uint8_t* at(int x, int y) { return px.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
    const std::uint8_t* at(int x, int y) const {
        return px.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }

    std::uint64_t byte_hash() const { return fnv1a(px.data(), px.size()); }
};

inline void write_ppm(const std::string& path, const Image8& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("write_ppm: cannot open " + path);
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
    if (!os) throw IoError("write_ppm: write failed " + path);
}

inline Image8 read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("read_ppm: cannot open " + path);
    std::string magic;
    is >> magic;
    if (magic != "P6") throw IoError("read_ppm: not a P6 file: " + path);
    auto next_int = [&is, &path]() {
        // skip whitespace and '#' comments
        int c = is.get();
        while (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '#') {
            if (c == '#')
                while (c != '\n' && c != EOF) c = is.get();
            c = is.get();
        }
        int v = 0;
        bool any = false;
        while (c >= '0' && c <= '9') {
            v = v * 10 + (c - '0');
            any = true;
            c = is.get();
        }
        if (!any) throw IoError("read_ppm: malformed header: " + path);
        return v;
    };
    const int w = next_int();
    const int h = next_int();
    const int maxval = next_int();
    if (w <= 0 || h <= 0 || maxval != 255) throw IoError("read_ppm: unsupported dimensions/depth: " + path);
    Image8 img(w, h);
    is.read(reinterpret_cast<char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
    if (!is) throw IoError("read_ppm: truncated pixel data: " + path);
    return img;
}

// Bilinear resample. Constant images stay constant (weights sum to one).
inline Image8 bilinear_resize(const Image8& src, int out_w, int out_h) {
    if (out_w <= 0 || out_h <= 0) throw ContractError("bilinear_resize: non-positive output size");
    Image8 out(out_w, out_h);
    const double sx = static_cast<double>(src.width) / out_w;
    const double sy = static_cast<double>(src.height) / out_h;
    for (int y = 0; y < out_h; ++y) {
        const double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        const double wy = fy - y0;
        int y1 = y0 + 1;
        y0 = std::clamp(y0, 0, src.height - 1);
        y1 = std::clamp(y1, 0, src.height - 1);
        for (int x = 0; x < out_w; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            const double wx = fx - x0;
            int x1 = x0 + 1;
            x0 = std::clamp(x0, 0, src.width - 1);
            x1 = std::clamp(x1, 0, src.width - 1);
            const std::uint8_t* p00 = src.at(x0, y0);
            const std::uint8_t* p10 = src.at(x1, y0);
            const std::uint8_t* p01 = src.at(x0, y1);
            const std::uint8_t* p11 = src.at(x1, y1);
            std::uint8_t* o = out.at(x, y);
            for (int c = 0; c < 3; ++c) {
                const double v = (1 - wy) * ((1 - wx) * p00[c] + wx * p10[c]) +
                                 wy * ((1 - wx) * p01[c] + wx * p11[c]);
                o[c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
            }
        }
    }
    return out;
}

// Downscale by an integer factor with box averaging (dimensions round down).
inline Image8 box_downscale(const Image8& src, int factor) {
    if (factor < 1) throw ContractError("box_downscale: factor must be >= 1");
    if (factor == 1) return src;
    const int out_w = src.width / factor;
    const int out_h = src.height / factor;
    if (out_w < 1 || out_h < 1)
        throw ContractError("box_downscale: result smaller than 1x1 for factor " + std::to_string(factor));
    Image8 out(out_w, out_h);
    const double inv = 1.0 / (factor * factor);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            double acc[3] = {0, 0, 0};
            for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx) {
                    const std::uint8_t* p = src.at(x * factor + dx, y * factor + dy);
                    for (int c = 0; c < 3; ++c) acc[c] += p[c];
                }
            std::uint8_t* o = out.at(x, y);
            for (int c = 0; c < 3; ++c)
                o[c] = static_cast<std::uint8_t>(std::lround(acc[c] * inv));
        }
    return out;
}

inline Image8 flip_horizontal(const Image8& src) {
    Image8 out(src.width, src.height);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            const std::uint8_t* p = src.at(src.width - 1 - x, y);
            std::uint8_t* o = out.at(x, y);
            o[0] = p[0];
            o[1] = p[1];
            o[2] = p[2];
        }
    return out;
}

// Separable box blur with edge clamping; radius 0 is the identity.
inline Image8 box_blur(const Image8& src, int radius) {
    if (radius <= 0) return src;
    Image8 tmp(src.width, src.height);
    Image8 out(src.width, src.height);
    const int n = 2 * radius + 1;
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            int acc[3] = {0, 0, 0};
            for (int d = -radius; d <= radius; ++d) {
                const std::uint8_t* p = src.at(std::clamp(x + d, 0, src.width - 1), y);
                for (int c = 0; c < 3; ++c) acc[c] += p[c];
            }
            std::uint8_t* o = tmp.at(x, y);
            for (int c = 0; c < 3; ++c) o[c] = static_cast<std::uint8_t>((acc[c] + n / 2) / n);
        }
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            int acc[3] = {0, 0, 0};
            for (int d = -radius; d <= radius; ++d) {
                const std::uint8_t* p = tmp.at(x, std::clamp(y + d, 0, src.height - 1));
                for (int c = 0; c < 3; ++c) acc[c] += p[c];
            }
            std::uint8_t* o = out.at(x, y);
            for (int c = 0; c < 3; ++c) o[c] = static_cast<std::uint8_t>((acc[c] + n / 2) / n);
        }
    return out;
}

}  // namespace dfdet
