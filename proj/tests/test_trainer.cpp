#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "amalgam/fixtures.hpp"
#include "amalgam/model_augment.hpp"
#include "amalgam/trainer.hpp"
#include <limits>

#include "oracles.hpp"

using namespace amalgam;

// Single linear layer, one sample, one step: the update must equal
// theta - lr * g with g checked against central finite differences.
TEST_CASE("train: one step matches the finite-difference gradient") {
    ModelGraph g;
    g.input = {"image", {1, 2, 2}};
    g.layers = {unary_layer("f", "flatten"), linear_layer("h", 4, 3)};
    g.edges = {{"f", "h", false, ""}};
    g.heads = {"h"};
    ParamStore params = init_params(g, 17);

    DatasetContainer data;
    data.meta = {"image", 3, 0, 0.0, 1.0};
    data.samples = Tensor::of_f32({1, 1, 2, 2}, {0.1f, 0.7f, 0.3f, 0.9f});
    data.labels = Tensor::of_i64({1}, {2});

    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 1;
    cfg.lr = 0.01;
    auto [after, log] = train(g, params, data, cfg);

    // Finite differences of the per-sample loss wrt each parameter.
    Executor exec(g);
    const double h = 1e-4;
    for (const auto& [key, theta0] : params.values) {
        const Tensor& theta1 = after.at(key.first, key.second);
        for (int64_t i = 0; i < theta0.numel(); ++i) {
            ParamStore probe = params;
            Tensor& t = probe.at(key.first, key.second);
            const double keep = t.get_flat(i);
            t.set_flat(i, keep + h);
            Executor::Run up = exec.forward(probe, data.sample(0), DType::f64);
            const double lu = up.engine.value(Executor::total_loss(up, 2)).get_flat(0);
            t.set_flat(i, keep - h);
            Executor::Run dn = exec.forward(probe, data.sample(0), DType::f64);
            const double ld = dn.engine.value(Executor::total_loss(dn, 2)).get_flat(0);
            const double fd = (lu - ld) / (2 * h);
            const double applied = (theta0.get_flat(i) - theta1.get_flat(i)) / cfg.lr;
            CHECK(std::abs(applied - fd) <= 1e-4 * std::max({1.0, std::abs(fd), std::abs(applied)}));
        }
    }
}

TEST_CASE("train: lr 1e-30 leaves float32 parameters bit-identical; lr 0 rejected") {
    ModelGraph g;
    g.input = {"image", {1, 2, 2}};
    g.layers = {unary_layer("f", "flatten"), linear_layer("h", 4, 2)};
    g.edges = {{"f", "h", false, ""}};
    g.heads = {"h"};
    DatasetContainer data = synth_images(8, 2, 1, 2, 2, 3);

    // One normal step first so no parameter is exactly zero.
    TrainConfig warm;
    warm.epochs = 1;
    warm.batch = 8;
    warm.lr = 0.5;
    auto [params, lg] = train(g, init_params(g, 5), data, warm);
    for (const auto& [key, t] : params.values)
        for (float v : t.f32()) REQUIRE(v != 0.0f);

    TrainConfig tiny = warm;
    tiny.lr = 1e-30;
    auto [after, lg2] = train(g, params, data, tiny);
    CHECK(after.same_bits(params));

    TrainConfig zero = warm;
    zero.lr = 0.0;
    CHECK_THROWS_AS(train(g, params, data, zero), std::invalid_argument);
}

TEST_CASE("train: null augmentation (alpha 0) reproduces direct training bit-exactly") {
    const ModelGraph g = tiny_cnn(10, 3);
    const ParamStore params = init_params(g, 7);
    DatasetContainer data = synth_images(30, 3, 1, 10, 10, 9);

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 8;
    cfg.lr = 0.05;
    cfg.seed = 123;

    auto [direct, log1] = train(g, params, data, cfg);

    auto [aug_data, secret] = augment_images(data, 0.0, {}, 11);
    AugmentResult res = augment_model(g, params, plan_subnets(g, 0.0, 1, 13), secret);
    auto [aug_params, log2] = train(res.graph, res.params, aug_data, cfg);

    for (const auto& l : g.layers) {
        const std::string aug_id = res.bundle.layer_map.at(l.id);
        for (const auto& [name, dims] : l.param_shapes)
            CHECK(aug_params.at(aug_id, name).same_bits(direct.at(l.id, name)));
    }
}

TEST_CASE("train: augmented training at alpha 0.5 leaves original layers bit-equal to standalone") {
    ModelGraph g;
    g.input = {"image", {1, 10, 10}};
    g.layers = {conv_layer("c", 1, 4, 3),        unary_layer("r", "relu"),
                pool_layer("p", "maxpool2d", 2), unary_layer("f", "flatten"),
                linear_layer("fc", 64, 10),      unary_layer("r2", "relu"),
                linear_layer("h", 10, 3)};
    g.edges = {{"c", "r", false, ""},  {"r", "p", false, ""},   {"p", "f", false, ""},
               {"f", "fc", false, ""}, {"fc", "r2", false, ""}, {"r2", "h", false, ""}};
    g.heads = {"h"};
    const ParamStore params = init_params(g, 19);
    DatasetContainer data = synth_images(48, 3, 1, 10, 10, 21);

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 16;
    cfg.lr = 0.05;
    cfg.seed = 77;

    auto [direct, log1] = train(g, params, data, cfg);

    auto [aug_data, secret] = augment_images(data, 0.5, {}, 23);
    AugmentResult res = augment_model(g, params, plan_subnets(g, 0.5, 2, 29), secret);
    auto [aug_params, log2] = train(res.graph, res.params, aug_data, cfg);

    for (const auto& l : g.layers) {
        const std::string aug_id = res.bundle.layer_map.at(l.id);
        for (const auto& [name, dims] : l.param_shapes)
            CHECK(aug_params.at(aug_id, name).same_bits(direct.at(l.id, name)));
    }
}

TEST_CASE("train: epoch-mean loss strictly decreases over the first 3 epochs") {
    const ModelGraph g = tiny_cnn(12, 4);
    DatasetContainer data = synth_images(120, 4, 1, 12, 12, 31);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 16;
    cfg.lr = 0.05;
    auto [params, log] = train(g, init_params(g, 37), data, cfg);

    std::vector<double> epoch_mean(3, 0.0);
    std::vector<int> counts(3, 0);
    for (const auto& r : log.records) {
        epoch_mean[size_t(r.epoch)] += r.loss_total;
        counts[size_t(r.epoch)] += 1;
    }
    for (int e = 0; e < 3; ++e) epoch_mean[size_t(e)] /= counts[size_t(e)];
    CHECK(epoch_mean[1] < epoch_mean[0]);
    CHECK(epoch_mean[2] < epoch_mean[1]);
}

TEST_CASE("evaluate: separable two-point set reaches accuracy 1.0 after convergence") {
    ModelGraph g;
    g.input = {"image", {1, 1, 2}};
    g.layers = {unary_layer("f", "flatten"), linear_layer("h", 2, 2)};
    g.edges = {{"f", "h", false, ""}};
    g.heads = {"h"};

    DatasetContainer data;
    data.meta = {"image", 2, 0, 0.0, 1.0};
    data.samples = Tensor::of_f32({2, 1, 1, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
    data.labels = Tensor::of_i64({2}, {0, 1});

    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch = 2;
    cfg.lr = 0.5;
    auto [params, log] = train(g, init_params(g, 41), data, cfg);
    auto [loss, acc] = evaluate(g, params, data, 0);
    CHECK(acc == 1.0);
    CHECK(loss < 0.1);
}

TEST_CASE("evaluate: untrained model on label-independent data scores about 1/k") {
    const int64_t k = 4, n = 2000;
    const ModelGraph g = tiny_cnn(8, k);
    const ParamStore params = init_params(g, 43);
    DatasetContainer data = random_label_images(n, k, 1, 8, 8, 47);
    auto [loss, acc] = evaluate(g, params, data, 0);
    const double p = 1.0 / double(k);
    const double sigma = std::sqrt(p * (1 - p) / double(n));
    CHECK(std::abs(acc - p) <= 3.0 * sigma);
}

TEST_CASE("evaluate: idempotent and head-index checked") {
    const ModelGraph g = tiny_cnn(8, 3);
    const ParamStore params = init_params(g, 53);
    DatasetContainer data = synth_images(16, 3, 1, 8, 8, 59);
    auto a = evaluate(g, params, data, 0);
    auto b = evaluate(g, params, data, 0);
    CHECK(a == b);
    CHECK_THROWS_AS(evaluate(g, params, data, 5), std::invalid_argument);
}

TEST_CASE("train: metrics log is byte-reproducible in deterministic mode") {
    const ModelGraph g = tiny_cnn(8, 3);
    DatasetContainer data = synth_images(24, 3, 1, 8, 8, 61);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 8;
    cfg.lr = 0.05;
    cfg.seed = 3;
    auto [p1, log1] = train(g, init_params(g, 67), data, cfg);
    auto [p2, log2] = train(g, init_params(g, 67), data, cfg);
    CHECK(log1.to_csv() == log2.to_csv());
    CHECK(log1.to_csv().rfind("epoch,step,loss_total,loss_h0,acc_h0,wall_ms\n", 0) == 0);
    for (const auto& r : log1.records) CHECK(r.wall_ms == 0);

    // Records are ordered by (epoch, step).
    for (size_t i = 1; i < log1.records.size(); ++i) {
        const auto& a = log1.records[i - 1];
        const auto& b = log1.records[i];
        CHECK(std::make_pair(a.epoch, a.step) < std::make_pair(b.epoch, b.step));
    }
}

TEST_CASE("train: aborts with step context on a non-finite loss") {
    const ModelGraph g = tiny_cnn(8, 3);
    DatasetContainer data = synth_images(24, 3, 1, 8, 8, 71);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 8;
    ParamStore params = init_params(g, 73);
    params.at("head", "bias").f32()[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(train(g, params, data, cfg), doctest::Contains("epoch"),
                         std::runtime_error);
}

TEST_CASE("train: dataset/model modality mismatch is rejected") {
    const ModelGraph g = tiny_cnn(8, 3);
    DatasetContainer data = synth_text(8, 3, 50, 6, 79);
    TrainConfig cfg;
    CHECK_THROWS_AS(train(g, init_params(g, 83), data, cfg), std::invalid_argument);
}
