#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <unistd.h>
#include <unordered_map>
#include <unordered_set>

#include "dfdet/facetrack.hpp"
#include "dfdet/generator.hpp"
#include "dfdet/sampler.hpp"

using namespace dfdet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const char* stem) {
        path = fs::temp_directory_path() / (std::string(stem) + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

Manifest tiny_manifest() {
    Manifest m;
    VideoRecord r;
    r.video_id = "v0";
    r.label = Label::fake;
    r.split = Split::train;
    r.total_frames = 30;
    r.frames = {{0, "v0/f0.ppm", {{10, 10, 20, 20}}}, {10, "v0/f10.ppm", {}}};
    m.records.push_back(r);
    return m;
}

}  // namespace

TEST_CASE("sample_frames") {
    // (300, 10) -> 30 indices 0,10,...,290
    auto idx = sample_frames(300, 10);
    REQUIRE(idx.size() == 30);
    CHECK(idx.front() == 0);
    CHECK(idx.back() == 290);

    CHECK(sample_frames(5, 10) == std::vector<int>{0});
    CHECK(sample_frames(23, 7) == std::vector<int>{0, 7, 14, 21});

    // length == ceil(n / s)
    for (int n : {1, 7, 30, 299, 300, 301})
        for (int s : {1, 3, 10, 400})
            CHECK(sample_frames(n, s).size() == static_cast<std::size_t>((n + s - 1) / s));

    CHECK_THROWS_AS(sample_frames(0, 10), ContractError);
    CHECK_THROWS_AS(sample_frames(10, 0), ContractError);
}

TEST_CASE("crop_face geometry") {
    Image8 frame(200, 200);
    for (int y = 0; y < 200; ++y)
        for (int x = 0; x < 200; ++x) {
            auto* p = frame.at(x, y);
            p[0] = static_cast<std::uint8_t>(x);
            p[1] = static_cast<std::uint8_t>(y);
            p[2] = 7;
        }

    SECTION("margin expansion: (30,30,40,40) + 20 -> region (10,10,80,80)") {
        // out_side equal to the region side makes the resize the identity,
        // so corner pixels pin the region placement exactly.
        Image8 patch = crop_face(frame, {30, 30, 40, 40}, 20, 80);
        CHECK(patch.at(0, 0)[0] == 10);
        CHECK(patch.at(0, 0)[1] == 10);
        CHECK(patch.at(79, 79)[0] == 89);
        CHECK(patch.at(79, 79)[1] == 89);
    }

    SECTION("clipping at the frame boundary") {
        Image8 patch = crop_face(frame, {0, 0, 40, 40}, 20, 60);
        CHECK(patch.at(0, 0)[0] == 0);  // region starts at (0,0)
        CHECK(patch.at(0, 0)[1] == 0);
        CHECK(patch.width == 60);
    }

    SECTION("uniform frame stays uniform after resize") {
        Image8 gray(50, 40);
        std::fill(gray.px.begin(), gray.px.end(), 123);
        Image8 patch = crop_face(gray, {5, 5, 17, 13}, 4, 64);
        for (auto v : patch.px) CHECK(v == 123);
    }

    SECTION("output side is always out_side") {
        for (int side : {16, 64, 224}) {
            Image8 p = crop_face(frame, {190, 190, 9, 9}, 20, side);
            CHECK(p.width == side);
            CHECK(p.height == side);
        }
    }

    SECTION("box entirely outside the frame") {
        CHECK_THROWS_AS(crop_face(frame, {500, 500, 10, 10}, 20, 32), ContractError);
    }
}

TEST_CASE("downscale_for_detection") {
    Image8 frame(1920, 1080);
    Image8 out = box_downscale(frame, 4);
    CHECK(out.width == 480);
    CHECK(out.height == 270);

    Image8 tiny(5, 5);
    tiny.px.assign(tiny.px.size(), 42);
    Image8 same = box_downscale(tiny, 1);
    CHECK(same.byte_hash() == tiny.byte_hash());

    CHECK(rescale_box({10, 10, 20, 20}, 4) == BBox{40, 40, 80, 80});
    CHECK_THROWS_AS(box_downscale(tiny, 9), ContractError);
}

TEST_CASE("manifest parsing rejects malformed rows with line numbers") {
    TempDir dir("dfdet_manifest");

    SECTION("empty manifest") {
        const auto p = (dir.path / "empty.txt").string();
        std::ofstream(p) << "";
        CHECK_THROWS_WITH(load_manifest(p), Catch::Matchers::ContainsSubstring("empty manifest"));
    }

    SECTION("single valid row") {
        const auto p = (dir.path / "one.txt").string();
        std::ofstream(p) << "v0\tfake\ttrain\t30\t0|v0/f0.ppm|1,2,3,4;10|v0/f10.ppm|\n";
        Manifest m = load_manifest(p);
        REQUIRE(m.records.size() == 1);
        CHECK(m.records[0].video_id == "v0");
        CHECK(m.records[0].label == Label::fake);
        CHECK(m.records[0].total_frames == 30);
        REQUIRE(m.records[0].frames.size() == 2);
        CHECK(m.records[0].frames[0].boxes[0] == BBox{1, 2, 3, 4});
        CHECK(m.records[0].frames[1].boxes.empty());
    }

    SECTION("malformed rows carry the line number") {
        const auto p = (dir.path / "bad.txt").string();
        std::ofstream(p) << "v0\tfake\ttrain\t30\t0|v0/f0.ppm|\n"
                         << "v1\tbogus\ttrain\t30\t0|v1/f0.ppm|\n";
        CHECK_THROWS_WITH(load_manifest(p), Catch::Matchers::ContainsSubstring(":2:"));
    }

    SECTION("duplicate video ids rejected") {
        const auto p = (dir.path / "dup.txt").string();
        std::ofstream(p) << "v0\tfake\ttrain\t30\t0|a.ppm|\n"
                         << "v0\treal\ttrain\t30\t0|b.ppm|\n";
        CHECK_THROWS_WITH(load_manifest(p), Catch::Matchers::ContainsSubstring("duplicate"));
    }

    SECTION("non-positive box extents rejected") {
        const auto p = (dir.path / "box.txt").string();
        std::ofstream(p) << "v0\tfake\ttrain\t30\t0|a.ppm|1,2,0,4\n";
        CHECK_THROWS_AS(load_manifest(p), IoError);
    }

    SECTION("missing file") { CHECK_THROWS_AS(load_manifest("/no/such/file.txt"), IoError); }
}

TEST_CASE("manifest round-trips losslessly") {
    TempDir dir("dfdet_mrt");
    Manifest m = tiny_manifest();
    VideoRecord r2 = m.records[0];
    r2.video_id = "v1";
    r2.label = Label::real;
    r2.split = Split::val;
    m.records.push_back(r2);

    const auto p = (dir.path / "m.txt").string();
    save_manifest(p, m);
    Manifest back = load_manifest(p);
    CHECK(back == m);
}

TEST_CASE("generator: determinism, counts, splits") {
    TempDir dir("dfdet_gen");
    GeneratorConfig cfg;
    cfg.num_videos = 24;
    cfg.frames_per_video = 40;
    cfg.sample_stride = 10;
    cfg.seed = 77;
    cfg.frame_side = 48;

    const auto out1 = (dir.path / "d1").string();
    const auto out2 = (dir.path / "d2").string();
    Manifest m1 = generate_synthetic_dataset(cfg, out1);
    Manifest m2 = generate_synthetic_dataset(cfg, out2);

    SECTION("same seed twice is byte-identical") {
        CHECK(m1 == m2);
        for (const auto& rec : m1.records)
            for (const auto& f : rec.frames) {
                auto a = read_ppm(out1 + "/" + f.image);
                auto b = read_ppm(out2 + "/" + f.image);
                REQUIRE(a.byte_hash() == b.byte_hash());
            }
    }

    SECTION("label counts follow the documented rounding rule") {
        // 24 / 1.28 = 18.75 -> 19 fake, 5 real
        CHECK(fake_video_count(24, 0.28) == 19);
        CHECK(fake_video_count(200, 0.28) == 156);
        int fakes = 0;
        for (const auto& r : m1.records) fakes += r.label == Label::fake;
        CHECK(fakes == 19);
    }

    SECTION("every split contains both classes") {
        for (Split s : {Split::train, Split::val, Split::test}) {
            int re = 0, fa = 0;
            for (const auto& r : m1.records)
                if (r.split == s) (r.label == Label::real ? re : fa)++;
            INFO(to_string(s));
            CHECK(re > 0);
            CHECK(fa > 0);
        }
    }

    SECTION("manifest round trip of generator output") {
        Manifest loaded = load_manifest(out1 + "/manifest.txt");
        CHECK(loaded == m1);
    }

    SECTION("sampled frames carry exactly one box, neighbors none") {
        for (const auto& rec : m1.records)
            for (const auto& f : rec.frames) {
                if (f.frame_index % cfg.sample_stride == 0)
                    CHECK(f.boxes.size() == 1);
                else
                    CHECK(f.boxes.empty());
            }
    }
}

TEST_CASE("generator: strength -> 0 makes fake frames converge to real renders") {
    GeneratorConfig cfg;
    cfg.frame_side = 48;
    Rng r(9);
    auto style = gendetail::draw_style(r, cfg);

    auto img0 = gendetail::render_float(cfg, style, 12, 0.0);
    auto img_eps = gendetail::render_float(cfg, style, 12, 1e-9);
    auto img_mid = gendetail::render_float(cfg, style, 12, 0.6);

    double mad_eps = 0, mad_mid = 0;
    for (std::size_t i = 0; i < img0.size(); ++i) {
        mad_eps += std::abs(img_eps[i] - img0[i]);
        mad_mid += std::abs(img_mid[i] - img0[i]);
    }
    mad_eps /= img0.size();
    mad_mid /= img0.size();
    CHECK(mad_eps < 1e-6);
    CHECK(mad_mid > 0.1);
}

TEST_CASE("balanced sampler") {
    TempDir dir("dfdet_sampler");
    GeneratorConfig cfg;
    cfg.num_videos = 30;
    cfg.frames_per_video = 20;
    cfg.seed = 5;
    cfg.frame_side = 48;
    Manifest m = generate_synthetic_dataset(cfg, (dir.path / "d").string());

    SECTION("single-class split is an error") {
        Manifest single;
        single.records.push_back(m.records[0]);
        CHECK_THROWS_AS(BalancedSampler(single, m.records[0].split, Rng(1)), ContractError);
    }

    SECTION("10k draws are balanced within 2%") {
        BalancedSampler s(m, Split::train, Rng(123));
        int reals = 0;
        for (int i = 0; i < 10000; ++i) reals += s.next()->label == Label::real;
        CHECK(reals > 4800);
        CHECK(reals < 5200);
    }

    SECTION("coverage: every video appears within 50*|split| draws") {
        BalancedSampler s(m, Split::train, Rng(7));
        std::unordered_set<std::string> seen;
        const std::size_t budget = 50 * s.size();
        for (std::size_t i = 0; i < budget; ++i) seen.insert(s.next()->video_id);
        CHECK(seen.size() == s.size());
    }

    SECTION("balanced split behaves as uniform sampling over classes") {
        Manifest bal;
        int re = 0, fa = 0;
        for (const auto& rec : m.records) {
            if (rec.split != Split::train) continue;
            if (rec.label == Label::real && re < 4) {
                bal.records.push_back(rec);
                ++re;
            } else if (rec.label == Label::fake && fa < 4) {
                bal.records.push_back(rec);
                ++fa;
            }
        }
        REQUIRE(bal.records.size() == 8);
        BalancedSampler s(bal, Split::train, Rng(3));
        std::unordered_map<std::string, int> counts;
        for (int i = 0; i < 8000; ++i) counts[s.next()->video_id]++;
        for (const auto& [id, c] : counts) CHECK(std::abs(c - 1000) < 150);
    }
}

TEST_CASE("track building honors ordering, offsets and flips") {
    TempDir dir("dfdet_track");
    GeneratorConfig cfg;
    cfg.num_videos = 6;
    cfg.frames_per_video = 30;
    cfg.seed = 21;
    cfg.frame_side = 48;
    const auto root = (dir.path / "d").string();
    Manifest m = generate_synthetic_dataset(cfg, root);

    FrameCache cache(root);
    ManifestBoxProvider boxes;
    TrackOptions opt;
    opt.stride = 10;
    opt.margin_px = 4;
    opt.patch_side = 32;

    FaceTrack t = build_track(m.records[0], cache, boxes, opt);
    REQUIRE(t.patches.size() == 3);  // frames 0, 10, 20
    CHECK(t.side == 32);
    for (std::size_t i = 1; i < t.patches.size(); ++i)
        CHECK(t.patches[i].frame_index > t.patches[i - 1].frame_index);

    // offset shifts pixels but keeps base boxes; clamped at the start
    TrackOptions off = opt;
    off.frame_offset = -2;
    FaceTrack t2 = build_track(m.records[0], cache, boxes, off);
    REQUIRE(t2.patches.size() == 3);
    CHECK(t2.patches[0].source_box == t.patches[0].source_box);
    // frame 0 - 2 clamps to 0: identical pixels; frame 10 - 2 = 8 differs
    CHECK(t2.patches[0].image.byte_hash() == t.patches[0].image.byte_hash());
    CHECK(t2.patches[1].image.byte_hash() != t.patches[1].image.byte_hash());

    TrackOptions flip = opt;
    flip.flip = true;
    FaceTrack t3 = build_track(m.records[0], cache, boxes, flip);
    CHECK(t3.patches[0].image.byte_hash() == flip_horizontal(t.patches[0].image).byte_hash());
}
