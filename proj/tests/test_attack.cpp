#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "amalgam/attack.hpp"
#include "amalgam/fixtures.hpp"
#include "amalgam/model_augment.hpp"

using namespace amalgam;

TEST_CASE("idlg_label: sign argument on a raw bias gradient") {
    const ModelGraph g = tiny_cnn(8, 3);
    NamedGrads grads;
    grads.emplace(std::make_pair(std::string("head"), std::string("bias")),
                  Tensor::of_f64({3}, {0.2, -0.7, 0.5}));
    CHECK(idlg_label(grads, g, 0) == 1);

    // Scaling by any positive constant cannot change the sign pattern.
    grads.at({"head", "bias"}) = Tensor::of_f64({3}, {0.2 * 37, -0.7 * 37, 0.5 * 37});
    CHECK(idlg_label(grads, g, 0) == 1);
}

TEST_CASE("idlg_label: recovers the true label for 100/100 computed gradients") {
    const ModelGraph g = tiny_cnn(10, 4);
    const ParamStore params = init_params(g, 3);
    DatasetContainer data = synth_images(100, 4, 1, 10, 10, 5);
    int correct = 0;
    for (int64_t i = 0; i < 100; ++i) {
        NamedGrads grads = sample_gradients(g, params, data.sample(i), data.label(i));
        if (idlg_label(grads, g, 0) == data.label(i)) ++correct;
    }
    CHECK(correct == 100);
}

TEST_CASE("idlg_label: works per head on an augmented model") {
    const ModelGraph g = tiny_cnn(10, 4);
    const ParamStore params = init_params(g, 7);
    DatasetContainer data = synth_images(20, 4, 1, 10, 10, 9);
    auto [aug_data, secret] = augment_images(data, 1.0, {}, 11);
    AugmentResult res = augment_model(g, params, plan_subnets(g, 1.0, 2, 13), secret);

    int correct = 0;
    for (int64_t i = 0; i < 20; ++i) {
        NamedGrads grads = sample_gradients(res.graph, res.params, aug_data.sample(i),
                                            aug_data.label(i));
        for (size_t h = 0; h < res.graph.heads.size(); ++h)
            if (idlg_label(grads, res.graph, h) == aug_data.label(i)) ++correct;
    }
    CHECK(correct == 20 * 3);
}

TEST_CASE("idlg_label: degenerate and malformed gradients raise errors") {
    const ModelGraph g = tiny_cnn(8, 3);
    NamedGrads grads;
    grads.emplace(std::make_pair(std::string("head"), std::string("bias")),
                  Tensor::of_f64({3}, {0.0, 0.2, 0.8}));  // p_y = 1 case: no negative
    CHECK_THROWS_AS(idlg_label(grads, g, 0), std::runtime_error);
    CHECK_THROWS_AS(idlg_label(grads, g, 3), std::invalid_argument);
}

TEST_CASE("dlg_reconstruct: true input as the initial dummy is a fixed point") {
    const ModelGraph g = tiny_cnn(8, 3);
    const ParamStore params = init_params(g, 15);
    DatasetContainer data = synth_images(4, 3, 1, 8, 8, 17);
    const Tensor victim_input = data.sample(0);
    const int64_t label = data.label(0);
    NamedGrads victim = sample_gradients(g, params, victim_input, label);

    AttackConfig cfg;
    cfg.iterations = 1;
    AttackResult r = dlg_reconstruct(g, params, victim, label, cfg, &victim_input, nullptr,
                                     &victim_input);
    CHECK(r.objective_history[0] <= 1e-18);
    CHECK(r.mse_original_region <= 1e-18);
}

TEST_CASE("dlg_reconstruct: objective history is non-increasing and deterministic") {
    const ModelGraph g = attack_cnn(8, 3);
    const ParamStore params = init_params(g, 19);
    DatasetContainer data = synth_images(4, 3, 1, 8, 8, 21);
    const Tensor victim_input = data.sample(1);
    NamedGrads victim = sample_gradients(g, params, victim_input, data.label(1));
    const int64_t label = idlg_label(victim, g, 0);
    CHECK(label == data.label(1));

    AttackConfig cfg;
    cfg.iterations = 30;
    cfg.seed = 99;
    AttackResult a = dlg_reconstruct(g, params, victim, label, cfg, &victim_input);
    AttackResult b = dlg_reconstruct(g, params, victim, label, cfg, &victim_input);

    REQUIRE(a.objective_history.size() == size_t(a.iterations_run));
    for (size_t i = 1; i < a.objective_history.size(); ++i)
        CHECK(a.objective_history[i] <= a.objective_history[i - 1]);
    CHECK(a.objective_history[a.objective_history.size() - 1] <
          0.5 * a.objective_history[0]);

    CHECK(a.reconstructed.same_bits(b.reconstructed));
    CHECK(a.objective_history == b.objective_history);
    CHECK(a.mse_original_region == b.mse_original_region);
}

TEST_CASE("dlg_reconstruct: validates its configuration") {
    const ModelGraph g = tiny_cnn(8, 3);
    const ParamStore params = init_params(g, 23);
    NamedGrads victim = sample_gradients(g, params, synth_images(1, 3, 1, 8, 8, 25).sample(0), 0);
    AttackConfig bad;
    bad.iterations = 0;
    CHECK_THROWS_AS(dlg_reconstruct(g, params, victim, 0, bad), std::invalid_argument);
    bad.iterations = 1;
    bad.fd_step = 0.0;
    CHECK_THROWS_AS(dlg_reconstruct(g, params, victim, 0, bad), std::invalid_argument);
}
