#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <unistd.h>

#include "dfdet/generator.hpp"
#include "dfdet/trainer.hpp"

using namespace dfdet;
namespace fs = std::filesystem;

namespace {

double sigma(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Var<double> col(std::vector<double> v) {
    const std::size_t n = v.size();
    return make_leaf<double>(Tensor<double>({n, 1}, std::move(v)));
}

struct Fixture {
    fs::path dir;
    Manifest manifest;
    std::unique_ptr<TrackStore> store;

    explicit Fixture(const char* stem, std::uint64_t seed = 61) {
        dir = fs::temp_directory_path() / (std::string(stem) + "_" + std::to_string(::getpid()));
        fs::remove_all(dir);
        GeneratorConfig gen;
        gen.num_videos = 20;
        gen.frames_per_video = 60;
        gen.sample_stride = 10;
        gen.frame_side = 48;
        gen.patch_side = 32;
        gen.seed = seed;
        manifest = generate_synthetic_dataset(gen, dir.string());
        TrackOptions opt;
        opt.stride = 10;
        opt.margin_px = 4;
        opt.patch_side = 32;
        store = std::make_unique<TrackStore>(manifest, dir.string(), opt);
    }
    ~Fixture() { fs::remove_all(dir); }
};

template <class T>
ModelConfig<T> small_model_config() {
    ModelConfig<T> cfg;
    cfg.backbone.input_side = 32;
    cfg.backbone.channels = {4, 8, 8};
    cfg.backbone.feature_dim = 16;
    cfg.gru_hidden = 8;
    cfg.gru_bi_layers = 2;
    return cfg;
}

}  // namespace

TEST_CASE("combine_afw examples") {
    const double eps = 1e-8;
    NoGrad ng;

    SECTION("zero boost weights reduce exactly to the main prediction") {
        auto l = col({1.7, -0.4, 0.9});
        auto w = col({0.3, 1.1, 0.8});
        auto lb = col({5.0, -2.0, 0.1});  // arbitrary boost logits
        auto wb = col({0.0, 0.0, 0.0});
        const double main_p = afw_probability<double>(l, w, eps)->value[0];
        const double comb_p = combine_afw<double>(l, w, lb, wb, eps)->value[0];
        CHECK(comb_p == main_p);  // bit-exact
    }

    SECTION("exact cancellation") {
        auto p = combine_afw<double>(col({1.0}), col({1.0}), col({-1.0}), col({1.0}), eps);
        CHECK(p->value[0] == Catch::Approx(0.5).margin(1e-12));
    }

    SECTION("worked example: sigma(0.2)") {
        auto p = combine_afw<double>(col({1.0, -2.0}), col({2.0, 1.0}), col({0.5, 0.5}),
                                     col({1.0, 1.0}), eps);
        CHECK(p->value[0] == Catch::Approx(0.549834).margin(1e-5));
    }

    SECTION("1000 random cases against the scalar oracle") {
        Rng rng(7);
        for (int trial = 0; trial < 1000; ++trial) {
            const std::size_t n = 1 + rng.uniform_index(12);
            std::vector<double> l(n), w(n), lb(n), wb(n);
            for (auto& v : l) v = rng.uniform(-4, 4);
            for (auto& v : w) v = rng.uniform(0, 2);
            for (auto& v : lb) v = rng.uniform(-4, 4);
            for (auto& v : wb) v = rng.uniform(0, 2);
            double num = 0, den = 0;
            for (std::size_t j = 0; j < n; ++j) {
                num += w[j] * l[j] + wb[j] * lb[j];
                den += w[j] + wb[j];
            }
            const double expect = sigma(num / (den + eps));
            auto p = combine_afw<double>(col(std::vector<double>(l)), col(std::vector<double>(w)),
                                         col(std::vector<double>(lb)), col(std::vector<double>(wb)), eps);
            REQUIRE(p->value[0] == Catch::Approx(expect).margin(1e-6));
        }
    }

    SECTION("symmetric in the roles of main and boost") {
        auto p1 = combine_afw<double>(col({1.0, -2.0}), col({2.0, 1.0}), col({0.5, 0.5}),
                                      col({1.0, 1.0}), eps);
        auto p2 = combine_afw<double>(col({0.5, 0.5}), col({1.0, 1.0}), col({1.0, -2.0}),
                                      col({2.0, 1.0}), eps);
        CHECK(p1->value[0] == Catch::Approx(p2->value[0]).margin(1e-12));
    }

    SECTION("length mismatch is an error") {
        CHECK_THROWS_AS(combine_afw<double>(col({1.0}), col({1.0}), col({1.0, 2.0}), col({1.0, 1.0}), eps),
                        ShapeError);
    }
}

TEST_CASE("combine_gru examples") {
    SECTION("zero boost logit gives the main probability") {
        CHECK(combine_gru_value(1.3, 0.0) == Catch::Approx(sigma(1.3)).margin(1e-12));
    }
    SECTION("cancellation") { CHECK(combine_gru_value(2.0, -2.0) == Catch::Approx(0.5).margin(1e-12)); }
    SECTION("worked example: sigma(1.0)") {
        CHECK(combine_gru_value(0.7, 0.3) == Catch::Approx(0.731059).margin(1e-5));
    }
    SECTION("graph version agrees with the value version") {
        Rng rng(3);
        NoGrad ng;
        for (int i = 0; i < 1000; ++i) {
            const double a = rng.uniform(-5, 5), b = rng.uniform(-5, 5);
            auto p = combine_gru<double>(make_leaf<double>(Tensor<double>::scalar(a)),
                                         make_leaf<double>(Tensor<double>::scalar(b)));
            REQUIRE(p->value[0] == Catch::Approx(combine_gru_value(a, b)).margin(1e-12));
        }
    }
}

TEST_CASE("zero-initialized boost replica leaves predictions unchanged") {
    Fixture fx("dfdet_boost_zero");
    auto mcfg = small_model_config<float>();
    DetectorModel<float> main_model(mcfg, 41);
    DetectorModel<float> boost_model(mcfg, 42, /*zero_init_heads=*/true);

    NoGrad ng;
    for (const VideoRecord* rec : fx.manifest.split_videos(Split::val)) {
        const FaceTrack& track = fx.store->track(*rec);
        auto mo = main_model.forward_input(main_model.track_to_input(track));
        auto bo = boost_model.forward_input(boost_model.track_to_input(track));
        auto c = combine_outputs(mo, bo, mcfg.afw_eps);
        REQUIRE(c.p_w_b == mo.p_w());
        REQUIRE(c.p_rnn_b == mo.p_rnn());
    }
}

TEST_CASE("train_boosting freezes the main network and improves the split loss") {
    Fixture fx("dfdet_boost_train");
    auto mcfg = small_model_config<float>();
    DetectorModel<float> main_model(mcfg, 43);
    DetectorModel<float> boost_model(mcfg, 44, /*zero_init_heads=*/true);

    // lightly train the main model first so there is signal to correct
    TrainConfig<float> tc;
    tc.lr = 0.002f;
    tc.videos_per_update = 4;
    tc.warmup_arcface_batches = 5;
    tc.arc_batch_size = 8;
    tc.frames_per_arcface_update = 16;
    tc.max_videos = 36;
    tc.checkpoint_every = 36;
    Trainer<float> trainer(main_model, *fx.store, tc);
    trainer.estimate_normalization();
    trainer.warmup_arcface();
    trainer.train();

    const std::uint64_t main_hash = main_model.params().value_hash();

    // probe outputs before boost training
    const VideoRecord* probe = fx.manifest.split_videos(Split::test)[0];
    double probe_before;
    {
        NoGrad ng;
        probe_before = main_model.forward_input(main_model.track_to_input(fx.store->track(*probe))).p_rnn();
    }

    auto main_only = evaluate_split<float>(main_model, nullptr, *fx.store, Split::val);
    auto main_samples = stage_samples(std::span<const PredictionBundle>(main_only),
                                      [](const PredictionBundle& b) { return std::optional<double>(b.p_rnn); });
    const double main_ll = log_loss(main_samples);

    BoostConfig<float> bc;
    bc.lr = 0.002f;
    bc.videos_per_update = 4;
    bc.passes = 10;
    auto stats = train_boosting(main_model, boost_model, *fx.store, Split::val, bc);
    CHECK(stats.updates > 0);

    CHECK(main_model.params().value_hash() == main_hash);
    {
        NoGrad ng;
        const double probe_after =
            main_model.forward_input(main_model.track_to_input(fx.store->track(*probe))).p_rnn();
        CHECK(probe_after == probe_before);
    }

    auto boosted = evaluate_split<float>(main_model, &boost_model, *fx.store, Split::val);
    auto boosted_samples = stage_samples(std::span<const PredictionBundle>(boosted),
                                         [](const PredictionBundle& b) { return b.p_rnn_boost; });
    REQUIRE(boosted_samples.size() == boosted.size());
    const double boosted_ll = log_loss(boosted_samples);
    // boost optimizes exactly this quantity on exactly this split
    CHECK(boosted_ll <= main_ll + 1e-6);
}

TEST_CASE("boost config validation and the residual objective") {
    Fixture fx("dfdet_boost_resid");
    auto mcfg = small_model_config<float>();
    DetectorModel<float> main_model(mcfg, 45);
    DetectorModel<float> boost_model(mcfg, 46, true);

    BoostConfig<float> bad;
    bad.lr = 0;
    CHECK_THROWS_AS(bad.validate(), ContractError);

    BoostConfig<float> bc;
    bc.objective = BoostConfig<float>::Objective::residual_mse;
    bc.passes = 2;
    bc.videos_per_update = 2;
    const auto before = boost_model.params().value_hash();
    train_boosting(main_model, boost_model, *fx.store, Split::val, bc);
    CHECK(boost_model.params().value_hash() != before);
}

TEST_CASE("train_boosting rejects a single-class split") {
    Fixture fx("dfdet_boost_single");
    Manifest single;
    for (const auto& r : fx.manifest.records)
        if (r.split == Split::val && r.label == Label::fake) single.records.push_back(r);
    REQUIRE(!single.records.empty());
    TrackStore store(single, fx.dir.string(), fx.store->options());

    auto mcfg = small_model_config<float>();
    DetectorModel<float> main_model(mcfg, 47);
    DetectorModel<float> boost_model(mcfg, 48, true);
    BoostConfig<float> bc;
    CHECK_THROWS_AS(train_boosting(main_model, boost_model, store, Split::val, bc), ContractError);
}
