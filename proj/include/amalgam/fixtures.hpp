#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "amalgam/dataset.hpp"
#include "amalgam/model_ir.hpp"
#include "amalgam/rng.hpp"

namespace amalgam {

// Small reference architectures and synthetic datasets used by the test
// suites and the demo tooling.

// 2 conv + 2 linear, ~57k parameters at the default sizes.
inline ModelGraph lenet_mini(int64_t channels = 1, int64_t img = 28, int64_t classes = 10) {
    ModelGraph g;
    g.input = {"image", {channels, img, img}};
    g.layers = {
        conv_layer("conv1", channels, 8, 5),
        unary_layer("relu1", "relu"),
        pool_layer("pool1", "maxpool2d", 2),
        conv_layer("conv2", 8, 16, 5),
        unary_layer("relu2", "relu"),
        pool_layer("pool2", "maxpool2d", 2),
        unary_layer("flat", "flatten"),
        LayerSpec{},  // fc1, filled below once the flat size is known
        unary_layer("relu3", "relu"),
        LayerSpec{},  // fc2
    };
    const int64_t s1 = (img - 4) / 2;        // after conv1 + pool
    const int64_t s2 = (s1 - 4) / 2;         // after conv2 + pool
    g.layers[7] = linear_layer("fc1", 16 * s2 * s2, 200);
    g.layers[9] = linear_layer("fc2", 200, classes);
    const char* order[] = {"conv1", "relu1", "pool1", "conv2", "relu2",
                           "pool2", "flat",  "fc1",   "relu3", "fc2"};
    for (int i = 0; i + 1 < 10; ++i) g.edges.push_back({order[i], order[i + 1], false, ""});
    g.heads = {"fc2"};
    return g;
}

// embedding -> mean pool -> linear classifier.
inline ModelGraph text_classifier(int64_t vocab = 1000, int64_t seq_len = 20, int64_t embed = 32,
                                  int64_t classes = 4) {
    ModelGraph g;
    g.input = {"text", {seq_len}};
    g.layers = {embedding_layer("embed", vocab, embed), unary_layer("pool", "mean_seq"),
                linear_layer("head", embed, classes)};
    g.edges = {{"embed", "pool", false, ""}, {"pool", "head", false, ""}};
    g.heads = {"head"};
    return g;
}

// One conv feeding one linear head, nothing else: the gradient-leakage
// victim. Small enough for finite-difference attacks, and linear enough
// that reconstruction from gradients actually works on the plain model.
inline ModelGraph attack_cnn(int64_t img = 14, int64_t classes = 4) {
    ModelGraph g;
    g.input = {"image", {1, img, img}};
    const int64_t s = img - 2;
    g.layers = {conv_layer("conv", 1, 4, 3), unary_layer("act", "relu"),
                unary_layer("flat", "flatten"), linear_layer("head", 4 * s * s, classes)};
    g.edges = {{"conv", "act", false, ""},
               {"act", "flat", false, ""},
               {"flat", "head", false, ""}};
    g.heads = {"head"};
    return g;
}

// One conv + one linear; small enough for finite-difference attacks.
inline ModelGraph tiny_cnn(int64_t img = 14, int64_t classes = 4) {
    ModelGraph g;
    g.input = {"image", {1, img, img}};
    const int64_t s = (img - 2) / 2;
    g.layers = {conv_layer("conv", 1, 4, 3), unary_layer("relu", "relu"),
                pool_layer("pool", "maxpool2d", 2), unary_layer("flat", "flatten"),
                linear_layer("head", 4 * s * s, classes)};
    g.edges = {{"conv", "relu", false, ""},
               {"relu", "pool", false, ""},
               {"pool", "flat", false, ""},
               {"flat", "head", false, ""}};
    g.heads = {"head"};
    return g;
}

// Class-dependent blob images in [0,1]: each class has a fixed prototype,
// samples are prototype + noise, so the task is learnable.
inline DatasetContainer synth_images(int64_t n, int64_t classes, int64_t channels, int64_t h,
                                     int64_t w, uint64_t seed) {
    DatasetContainer data;
    data.meta = {"image", classes, 0, 0.0, 1.0};
    data.samples = Tensor::zeros({n, channels, h, w}, DType::f32);
    data.labels = Tensor::zeros({n}, DType::i64);

    const int64_t plane = channels * h * w;
    std::vector<float> protos(size_t(classes * plane));
    Rng prng(mix_seed(seed, hash_name("prototypes")));
    for (auto& v : protos) v = float(prng.next_double());

    float* dst = data.samples.f32().data();
    int64_t* lab = data.labels.i64().data();
    Rng rng(mix_seed(seed, hash_name("samples")));
    for (int64_t i = 0; i < n; ++i) {
        const int64_t c = i % classes;
        lab[i] = c;
        const float* proto = protos.data() + c * plane;
        for (int64_t p = 0; p < plane; ++p) {
            const double v = 0.75 * proto[p] + 0.25 * rng.next_double();
            dst[i * plane + p] = float(v < 0 ? 0 : (v > 1 ? 1 : v));
        }
    }
    return data;
}

// Class-dependent token sequences: most tokens fall in the class's slice of
// the vocabulary.
inline DatasetContainer synth_text(int64_t n, int64_t classes, int64_t vocab, int64_t seq_len,
                                   uint64_t seed) {
    DatasetContainer data;
    data.meta = {"text", classes, vocab, 0.0, 1.0};
    data.samples = Tensor::zeros({n, seq_len}, DType::i64);
    data.labels = Tensor::zeros({n}, DType::i64);
    int64_t* dst = data.samples.i64().data();
    int64_t* lab = data.labels.i64().data();
    const int64_t band = vocab / classes;
    Rng rng(mix_seed(seed, hash_name("tokens")));
    for (int64_t i = 0; i < n; ++i) {
        const int64_t c = i % classes;
        lab[i] = c;
        for (int64_t p = 0; p < seq_len; ++p) {
            const bool in_band = rng.next_double() < 0.8;
            dst[i * seq_len + p] = in_band ? c * band + int64_t(rng.next_below(uint64_t(band)))
                                           : int64_t(rng.next_below(uint64_t(vocab)));
        }
    }
    return data;
}

// Labels independent of the images; accuracy of any fixed classifier on
// this set is 1/classes in expectation.
inline DatasetContainer random_label_images(int64_t n, int64_t classes, int64_t channels,
                                            int64_t h, int64_t w, uint64_t seed) {
    DatasetContainer data = synth_images(n, classes, channels, h, w, seed);
    Rng rng(mix_seed(seed, hash_name("labels")));
    for (auto& y : data.labels.i64()) y = int64_t(rng.next_below(uint64_t(classes)));
    return data;
}

}  // namespace amalgam
