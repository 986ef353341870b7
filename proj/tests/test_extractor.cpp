#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "amalgam/extractor.hpp"
#include "amalgam/fixtures.hpp"
#include "amalgam/model_augment.hpp"
#include "amalgam/trainer.hpp"

using namespace amalgam;

namespace {

struct Setup {
    ModelGraph original;
    ParamStore params;
    DatasetContainer data;
    DatasetContainer aug_data;
    AugmentResult aug;
};

Setup make_setup(double alpha, uint64_t seed) {
    Setup s;
    s.original = tiny_cnn(10, 3);
    s.params = init_params(s.original, seed);
    s.data = synth_images(32, 3, 1, 10, 10, seed + 1);
    auto [aug_data, secret] = augment_images(s.data, alpha, {}, seed + 2);
    s.aug_data = std::move(aug_data);
    s.aug = augment_model(s.original, s.params,
                          plan_subnets(s.original, alpha, alpha > 0 ? 1 : 0 + 1, seed + 3), secret);
    return s;
}

}  // namespace

TEST_CASE("extract: inverse of augmentation on untrained parameters") {
    Setup s = make_setup(0.5, 100);
    auto [extracted, report] = extract(s.aug.graph, s.aug.params, s.aug.bundle, s.original);
    CHECK(extracted.same_bits(s.params));
    CHECK(report.layers_copied == int64_t(s.original.layers.size()));
    CHECK(report.parameter_count == param_count(s.original));
    CHECK(report.checksum_match);
}

TEST_CASE("extract: after training, matches standalone training bit-exactly") {
    Setup s = make_setup(0.5, 200);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 8;
    cfg.lr = 0.05;
    cfg.seed = 5;

    auto [standalone, log1] = train(s.original, s.params, s.data, cfg);
    auto [trained_aug, log2] = train(s.aug.graph, s.aug.params, s.aug_data, cfg);
    auto [extracted, report] = extract(s.aug.graph, trained_aug, s.aug.bundle, s.original);
    CHECK(extracted.same_bits(standalone));

    // The extracted model consumes original (de-augmented) inputs and scores
    // exactly like the augmented model's original head on augmented inputs.
    auto [loss_o, acc_o] = evaluate(s.original, extracted, s.data, 0);
    auto [loss_a, acc_a] =
        evaluate(s.aug.graph, trained_aug, s.aug_data, size_t(s.aug.bundle.original_head_index));
    CHECK(acc_o == acc_a);
    CHECK(loss_o == doctest::Approx(loss_a).epsilon(1e-12));
}

TEST_CASE("extract: wrong bundle fails with the layer name, no partial output") {
    Setup s = make_setup(0.5, 300);
    SecretBundle wrong = s.aug.bundle;
    wrong.layer_map.erase("conv");
    CHECK_THROWS_WITH_AS(extract(s.aug.graph, s.aug.params, wrong, s.original),
                         doctest::Contains("conv"), std::invalid_argument);

    SecretBundle mismapped = s.aug.bundle;
    mismapped.layer_map["conv"] = mismapped.layer_map["head"];  // kind mismatch
    CHECK_THROWS_AS(extract(s.aug.graph, s.aug.params, mismapped, s.original),
                    std::invalid_argument);

    SecretBundle empty;
    empty.positions = s.aug.bundle.positions;
    CHECK_THROWS_AS(extract(s.aug.graph, s.aug.params, empty, s.original), std::invalid_argument);
}

TEST_CASE("extract: parameters are relocated, never transformed") {
    Setup s = make_setup(1.0, 400);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 8;
    cfg.lr = 0.1;
    auto [trained_aug, log] = train(s.aug.graph, s.aug.params, s.aug_data, cfg);
    auto [extracted, report] = extract(s.aug.graph, trained_aug, s.aug.bundle, s.original);
    for (const auto& l : s.original.layers) {
        const std::string aug_id = s.aug.bundle.layer_map.at(l.id);
        for (const auto& [name, dims] : l.param_shapes)
            CHECK(extracted.at(l.id, name).same_bits(trained_aug.at(aug_id, name)));
    }
}

TEST_CASE("apply_pretrained: empty subset, full subset, and shape checks") {
    const ModelGraph g = tiny_cnn(10, 3);
    const ParamStore params = init_params(g, 7);
    const ParamStore pretrained = init_params(g, 8);

    ParamStore same = apply_pretrained(g, params, pretrained, {});
    CHECK(same.same_bits(params));

    std::vector<std::string> all;
    for (const auto& l : g.layers)
        if (!l.param_shapes.empty()) all.push_back(l.id);
    ParamStore swapped = apply_pretrained(g, params, pretrained, all);
    CHECK(swapped.same_bits(pretrained));

    ParamStore bad = pretrained;
    bad.values[{"conv", "kernel"}] = Tensor::zeros({4, 1, 2, 2}, DType::f32);
    CHECK_THROWS_AS(apply_pretrained(g, params, bad, {"conv"}), std::invalid_argument);
    CHECK_THROWS_AS(apply_pretrained(g, params, pretrained, {"ghost"}), std::runtime_error);
}

TEST_CASE("apply_pretrained: survives augmentation and extraction bit-exactly") {
    const ModelGraph g = tiny_cnn(10, 3);
    const ParamStore params = init_params(g, 9);
    const ParamStore pretrained = init_params(g, 10);
    ParamStore applied = apply_pretrained(g, params, pretrained, {"conv"});

    DatasetContainer data = synth_images(8, 3, 1, 10, 10, 11);
    auto [aug_data, secret] = augment_images(data, 0.5, {}, 12);
    AugmentResult res = augment_model(g, applied, plan_subnets(g, 0.5, 1, 13), secret);
    auto [extracted, report] = extract(res.graph, res.params, res.bundle, g);
    CHECK(extracted.same_bits(applied));
    CHECK(extracted.at("conv", "kernel").same_bits(pretrained.at("conv", "kernel")));
}
