#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dfdet/adam.hpp"
#include "dfdet/gradcheck.hpp"
#include "dfdet/model.hpp"

using namespace dfdet;

namespace {

template <class T>
ModelConfig<T> tiny_config() {
    ModelConfig<T> cfg;
    cfg.backbone.input_side = 16;
    cfg.backbone.channels = {2, 4};
    cfg.backbone.feature_dim = 8;
    cfg.gru_hidden = 6;
    return cfg;
}

Image8 random_patch(Rng& rng, int side) {
    Image8 img(side, side);
    for (auto& b : img.px) b = static_cast<std::uint8_t>(rng.uniform_index(256));
    return img;
}

}  // namespace

TEST_CASE("extract_features shape and determinism contracts") {
    auto cfg = tiny_config<float>();
    DetectorModel<float> model(cfg, 11);
    Rng rng(3);

    std::vector<Image8> imgs;
    for (int i = 0; i < 7; ++i) imgs.push_back(random_patch(rng, 16));
    imgs[3] = imgs[0];  // duplicate patch

    std::vector<const Image8*> ptrs;
    for (auto& im : imgs) ptrs.push_back(&im);

    NoGrad ng;
    auto feats = model.extract_features(make_constant(model.patches_to_input(ptrs)));
    REQUIRE(feats->value.shape() == Shape{7, 8});

    // duplicate input -> identical rows
    for (int d = 0; d < 8; ++d) CHECK(feats->value.at(3, d) == feats->value.at(0, d));

    // permuting the batch permutes output rows identically
    std::vector<const Image8*> perm = {ptrs[5], ptrs[2], ptrs[0], ptrs[6], ptrs[1], ptrs[4], ptrs[3]};
    auto feats_p = model.extract_features(make_constant(model.patches_to_input(perm)));
    const std::size_t order[] = {5, 2, 0, 6, 1, 4, 3};
    for (int r = 0; r < 7; ++r)
        for (int d = 0; d < 8; ++d) CHECK(feats_p->value.at(r, d) == feats->value.at(order[r], d));

    // same input twice -> bit-identical output
    auto again = model.extract_features(make_constant(model.patches_to_input(ptrs)));
    CHECK(again->value.byte_hash() == feats->value.byte_hash());

    // wrong spatial size is a contract error
    Image8 wrong(8, 8);
    std::vector<const Image8*> bad = {&wrong};
    CHECK_THROWS_AS(model.patches_to_input(bad), ShapeError);
}

TEST_CASE("logit/weight heads") {
    auto cfg = tiny_config<float>();
    DetectorModel<float> model(cfg, 5);
    Rng rng(17);

    SECTION("w_j is non-negative on 10000 random features") {
        NoGrad ng;
        auto feats = make_constant(Tensor<float>::randn({10000, 8}, rng, 3.0f));
        auto out = model.head_outputs(feats);
        REQUIRE(out.weights->value.size() == 10000);
        std::size_t bad = 0;
        for (std::size_t i = 0; i < out.weights->value.size(); ++i)
            bad += out.weights->value[i] < 0.0f;
        CHECK(bad == 0);
    }

    SECTION("zero feature vector gives the biases") {
        DetectorModel<float> m2(cfg, 9);
        NoGrad ng;
        auto out = m2.head_outputs(make_constant(Tensor<float>({1, 8})));
        float bias_l = 0, bias_w = 0;
        for (const auto& it : m2.params().items()) {
            if (it.name == "afw/logit_head/b") bias_l = it.var->value[0];
            if (it.name == "afw/weight_head/b") bias_w = it.var->value[0];
        }
        CHECK(out.logits->value[0] == bias_l);
        CHECK(out.weights->value[0] == std::max(bias_w, 0.0f));
    }

    SECTION("head gradients match finite differences") {
        ModelConfig<double> dcfg = tiny_config<double>();
        DetectorModel<double> dm(dcfg, 23);
        Rng r2(5);
        Tensor<double> fv = Tensor<double>::randn({3, 8}, r2);

        auto feats = make_leaf<double>(fv, true);
        auto out = dm.head_outputs(feats);
        auto loss = add(sum(out.logits), sum(out.weights));
        backward(loss);

        auto fd = finite_diff_grad<double>(
            [&](const Tensor<double>& t) {
                NoGrad ng;
                auto o = dm.head_outputs(make_leaf<double>(t));
                double acc = 0;
                for (std::size_t i = 0; i < o.logits->value.size(); ++i) acc += o.logits->value[i];
                for (std::size_t i = 0; i < o.weights->value.size(); ++i) acc += o.weights->value[i];
                return acc;
            },
            fv, 1e-6);
        CHECK(compare_grads(feats->grad, fd, 1e-4, 1e-9).pass);
    }
}

TEST_CASE("arcface examples") {
    SECTION("m=0 reduces exactly to softmax cross-entropy on s*cos") {
        Rng rng(31);
        Tensor<double> fv = Tensor<double>::randn({4, 8}, rng);
        Tensor<double> wv = Tensor<double>::randn({2, 8}, rng);
        std::vector<std::size_t> labels{0, 1, 1, 0};
        const double s = 30.0;

        auto f = make_leaf<double>(fv);
        auto w = make_leaf<double>(wv);
        NoGrad ng;
        auto loss = arcface_loss(f, labels, w, s, 0.0);

        // independent scalar route
        double expect = 0;
        for (int i = 0; i < 4; ++i) {
            double cosrow[2];
            for (int c = 0; c < 2; ++c) {
                double dot = 0, nf = 0, nw = 0;
                for (int d = 0; d < 8; ++d) {
                    dot += fv.at(i, d) * wv.at(c, d);
                    nf += fv.at(i, d) * fv.at(i, d);
                    nw += wv.at(c, d) * wv.at(c, d);
                }
                cosrow[c] = dot / (std::sqrt(nf) * std::sqrt(nw));
            }
            const double z0 = s * cosrow[0], z1 = s * cosrow[1];
            const double m = std::max(z0, z1);
            const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
            expect += lse - (labels[i] == 0 ? z0 : z1);
        }
        expect /= 4;
        CHECK(loss->value[0] == Catch::Approx(expect).epsilon(1e-10));
    }

    SECTION("aligned feature, m=0, s=1, opposite class weights -> ln(1+e^-2)") {
        Tensor<double> fv({1, 4}, std::vector<double>{1, 0, 0, 0});
        Tensor<double> wv({2, 4}, std::vector<double>{1, 0, 0, 0, -1, 0, 0, 0});
        NoGrad ng;
        auto loss = arcface_loss(make_leaf<double>(fv), {0}, make_leaf<double>(wv), 1.0, 0.0);
        CHECK(loss->value[0] == Catch::Approx(std::log(1 + std::exp(-2.0))).epsilon(1e-6));
    }

    SECTION("margin never helps the aligned input") {
        Tensor<double> fv({1, 4}, std::vector<double>{1, 0, 0, 0});
        Tensor<double> wv({2, 4}, std::vector<double>{1, 0, 0, 0, -1, 0, 0, 0});
        NoGrad ng;
        auto l0 = arcface_loss(make_leaf<double>(fv), {0}, make_leaf<double>(wv), 30.0, 0.0);
        auto lm = arcface_loss(make_leaf<double>(fv), {0}, make_leaf<double>(wv), 30.0, 0.35);
        CHECK(lm->value[0] >= l0->value[0]);
    }

    SECTION("zero-norm feature is a numeric fault") {
        Tensor<double> fv({1, 4});
        Tensor<double> wv({2, 4}, 1.0);
        CHECK_THROWS_AS(arcface_loss(make_leaf<double>(fv), {0}, make_leaf<double>(wv), 30.0, 0.35),
                        NumericFault);
    }

    SECTION("gradients match finite differences") {
        Rng rng(12);
        Tensor<double> fv = Tensor<double>::randn({3, 6}, rng);
        Tensor<double> wv = Tensor<double>::randn({2, 6}, rng);
        std::vector<std::size_t> labels{1, 0, 1};

        auto f = make_leaf<double>(fv, true);
        auto w = make_leaf<double>(wv, true);
        backward(arcface_loss(f, labels, w, 30.0, 0.35));

        auto fd_f = finite_diff_grad<double>(
            [&](const Tensor<double>& t) {
                NoGrad ng;
                return arcface_loss(make_leaf<double>(t), labels, make_leaf<double>(wv), 30.0, 0.35)
                    ->value[0];
            },
            fv, 1e-6);
        auto fd_w = finite_diff_grad<double>(
            [&](const Tensor<double>& t) {
                NoGrad ng;
                return arcface_loss(make_leaf<double>(fv), labels, make_leaf<double>(t), 30.0, 0.35)
                    ->value[0];
            },
            wv, 1e-6);
        CHECK(compare_grads(f->grad, fd_f, 1e-4, 1e-9).pass);
        CHECK(compare_grads(w->grad, fd_w, 1e-4, 1e-9).pass);
    }
}

TEST_CASE("arcface loss decreases on a separable toy embedding set") {
    Rng rng(101);
    const std::size_t B = 32, D = 8;
    Tensor<double> fv({B, D});
    std::vector<std::size_t> labels(B);
    for (std::size_t i = 0; i < B; ++i) {
        labels[i] = i % 2;
        const double center = labels[i] == 0 ? 1.5 : -1.5;
        for (std::size_t d = 0; d < D; ++d) fv.at(i, d) = (d == 0 ? center : 0.0) + rng.normal(0, 0.3);
    }

    auto f = make_constant<double>(fv);
    auto w = make_leaf<double>(Tensor<double>::randn({2, D}, rng, 0.3), true, "W");
    std::vector<Var<double>> params{w};
    auto st = make_adam_state(params, 0.01);

    double initial = 0;
    for (int step = 0; step < 200; ++step) {
        w->zero_grad();
        auto loss = arcface_loss(f, labels, w, 30.0, 0.35);
        if (step == 0) initial = loss->value[0];
        backward(loss);
        adam_step_from_node_grads(params, st);
    }
    NoGrad ng;
    const double final_loss = arcface_loss(f, labels, w, 30.0, 0.35)->value[0];
    CHECK(final_loss < 0.1 * initial);
}

TEST_CASE("w_j stays non-negative through training steps") {
    auto cfg = tiny_config<float>();
    DetectorModel<float> model(cfg, 77);
    Rng rng(55);

    auto params = model.params().vars();
    auto st = make_adam_state(params, 0.05f);
    for (int step = 0; step < 30; ++step) {
        model.params().zero_grads();
        auto feats = make_constant(Tensor<float>::randn({6, 8}, rng));
        auto out = model.head_outputs(feats);
        // arbitrary pressure on both heads
        Tensor<float> target({6, 1}, step % 2 ? 1.0f : 0.0f);
        auto loss = add(bce_with_logits(out.logits, target), mean(out.weights));
        backward(loss);
        adam_step_from_node_grads(params, st);
    }
    NoGrad ng;
    auto check = model.head_outputs(make_constant(Tensor<float>::randn({100, 8}, rng, 2.0f)));
    std::size_t bad = 0;
    for (std::size_t i = 0; i < check.weights->value.size(); ++i) bad += check.weights->value[i] < 0.0f;
    CHECK(bad == 0);
}
