#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "amalgam/autodiff.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace amalgam;

TEST_CASE("conv2d: partial-identity kernel on 2x2") {
    Graph g;
    NodeId x = g.input(Tensor::of_f32({1, 2, 2}, {1, 2, 3, 4}));
    NodeId k = g.parameter(Tensor::of_f32({1, 1, 2, 2}, {1, 0, 0, 1}));
    NodeId b = g.parameter(Tensor::of_f32({1}, {0}));
    NodeId y = g.conv2d(x, k, b);
    CHECK(g.value(y).shape() == std::vector<int64_t>{1, 1, 1});
    CHECK(g.value(y).f32()[0] == doctest::Approx(5.0f));
}

TEST_CASE("conv2d: zero kernel and bias give zero output") {
    Rng rng(7);
    Graph g;
    NodeId x = g.input(oracle::random_tensor({2, 4, 4}, rng, DType::f32));
    NodeId k = g.parameter(Tensor::zeros({3, 2, 3, 3}, DType::f32));
    NodeId b = g.parameter(Tensor::zeros({3}, DType::f32));
    NodeId y = g.conv2d(x, k, b, 1, 1);
    for (float v : g.value(y).f32()) CHECK(v == 0.0f);
}

TEST_CASE("conv2d: matches the nested-loop oracle") {
    Rng rng(100);
    for (int trial = 0; trial < 8; ++trial) {
        const int64_t stride = 1 + int64_t(rng.next_below(2));
        const int64_t pad = int64_t(rng.next_below(2));
        Tensor x = oracle::random_tensor({1, 5, 5}, rng, DType::f32);
        Tensor k = oracle::random_tensor({2, 1, 3, 3}, rng, DType::f32);
        Tensor b = oracle::random_tensor({2}, rng, DType::f32);
        Graph g;
        NodeId y = g.conv2d(g.input(x), g.parameter(k), g.parameter(b), stride, pad);
        Tensor expect = oracle::conv2d(x, k, b, stride, pad);
        REQUIRE(g.value(y).shape() == expect.shape());
        CHECK(oracle::max_abs_diff(g.value(y), expect) <= 1e-6);
    }
}

TEST_CASE("conv2d: shape errors are descriptive") {
    Graph g;
    NodeId x = g.input(Tensor::zeros({1, 2, 2}, DType::f32));
    NodeId k = g.parameter(Tensor::zeros({1, 1, 3, 3}, DType::f32));
    NodeId b = g.parameter(Tensor::zeros({1}, DType::f32));
    CHECK_THROWS_AS(g.conv2d(x, k, b), std::invalid_argument);
    NodeId k2 = g.parameter(Tensor::zeros({1, 2, 2, 2}, DType::f32));
    CHECK_THROWS_AS(g.conv2d(x, k2, b), std::invalid_argument);
}

TEST_CASE("skip_conv2d: gathered 2x2 sub-image matches dense oracle") {
    // 4x4 input whose (0,1),(0,3),(2,1),(2,3) cells hold 1,2,3,4.
    std::vector<float> grid(16, 9.0f);
    grid[0 * 4 + 1] = 1;
    grid[0 * 4 + 3] = 2;
    grid[2 * 4 + 1] = 3;
    grid[2 * 4 + 3] = 4;
    Graph g;
    NodeId x = g.input(Tensor::of_f32({1, 4, 4}, grid));
    NodeId k = g.parameter(Tensor::of_f32({1, 1, 2, 2}, {1, 0, 0, 1}));
    NodeId b = g.parameter(Tensor::of_f32({1}, {0}));
    NodeId y = g.skip_conv2d(x, k, b, {0, 2}, {1, 3});
    CHECK(g.value(y).f32()[0] == doctest::Approx(5.0f));
}

TEST_CASE("skip_conv2d: full keep sets reduce to conv2d bit-exactly") {
    Rng rng(11);
    Tensor x = oracle::random_tensor({2, 5, 6}, rng, DType::f32);
    Tensor k = oracle::random_tensor({3, 2, 3, 3}, rng, DType::f32);
    Tensor b = oracle::random_tensor({3}, rng, DType::f32);
    Graph g;
    NodeId dense = g.conv2d(g.input(x), g.parameter(k), g.parameter(b));
    NodeId skip = g.skip_conv2d(g.input(x), g.parameter(k), g.parameter(b), {0, 1, 2, 3, 4},
                                {0, 1, 2, 3, 4, 5});
    CHECK(g.value(dense).same_bits(g.value(skip)));
}

static Tensor scatter_image(const Tensor& orig, const std::vector<int64_t>& rows,
                            const std::vector<int64_t>& cols, int64_t ha, int64_t wa,
                            uint64_t noise_seed) {
    const int64_t c = orig.dim(0), h = orig.dim(1), w = orig.dim(2);
    Rng rng(noise_seed);
    Tensor aug = Tensor::zeros({c, ha, wa}, DType::f32);
    for (int64_t i = 0; i < aug.numel(); ++i) aug.f32()[size_t(i)] = float(rng.next_double());
    for (int64_t cc = 0; cc < c; ++cc)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                aug.f32()[size_t((cc * ha + rows[size_t(y)]) * wa + cols[size_t(x)])] =
                    orig.f32()[size_t((cc * h + y) * w + x)];
    return aug;
}

TEST_CASE("skip_conv2d: augmented 1x35x35 equals conv on the original 1x28x28") {
    Rng rng(12);
    Tensor orig = oracle::random_tensor({1, 28, 28}, rng, DType::f32, 0.0, 1.0);
    Tensor k = oracle::random_tensor({4, 1, 5, 5}, rng, DType::f32);
    Tensor b = oracle::random_tensor({4}, rng, DType::f32);
    // 28 kept rows/cols inside a 35x35 grid.
    std::vector<int64_t> rows, cols;
    for (int64_t i = 0; i < 35; ++i) {
        if (i % 5 != 2) rows.push_back(i);  // drops 7 of 35
        if (i % 5 != 4) cols.push_back(i);
    }
    REQUIRE(rows.size() == 28);
    REQUIRE(cols.size() == 28);
    Tensor aug = scatter_image(orig, rows, cols, 35, 35, 77);

    Graph g;
    NodeId dense = g.conv2d(g.input(orig), g.parameter(k), g.parameter(b));
    NodeId skip = g.skip_conv2d(g.input(aug), g.parameter(k), g.parameter(b), rows, cols);
    CHECK(g.value(dense).same_bits(g.value(skip)));
}

TEST_CASE("skip_conv2d: gather equivalence property over random cases") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const int64_t c = 1 + int64_t(rng.next_below(3));
        const int64_t ha = 3 + int64_t(rng.next_below(5)), wa = 3 + int64_t(rng.next_below(5));
        const int64_t kk = 1 + int64_t(rng.next_below(2));
        std::vector<int64_t> rows, cols;
        for (int64_t i = 0; i < ha; ++i)
            if (rng.next_double() < 0.7) rows.push_back(i);
        for (int64_t i = 0; i < wa; ++i)
            if (rng.next_double() < 0.7) cols.push_back(i);
        if (int64_t(rows.size()) < kk) rows = {0, ha - 1};
        if (int64_t(cols.size()) < kk) cols = {0, wa - 1};
        Tensor x = oracle::random_tensor({c, ha, wa}, rng, DType::f32);
        Tensor k = oracle::random_tensor({2, c, kk, kk}, rng, DType::f32);
        Tensor b = oracle::random_tensor({2}, rng, DType::f32);

        Graph g;
        NodeId skip = g.skip_conv2d(g.input(x), g.parameter(k), g.parameter(b), rows, cols);
        NodeId dense = g.conv2d(g.input(oracle::gather(x, rows, cols)), g.parameter(k),
                                g.parameter(b));
        CHECK(g.value(skip).same_bits(g.value(dense)));
    }
}

TEST_CASE("skip_conv2d: argument errors") {
    Graph g;
    NodeId x = g.input(Tensor::zeros({1, 4, 4}, DType::f32));
    NodeId k = g.parameter(Tensor::zeros({1, 1, 2, 2}, DType::f32));
    NodeId b = g.parameter(Tensor::zeros({1}, DType::f32));
    CHECK_THROWS_AS(g.skip_conv2d(x, k, b, {0, 4}, {0, 1}), std::out_of_range);
    CHECK_THROWS_AS(g.skip_conv2d(x, k, b, {}, {0, 1}), std::invalid_argument);
    CHECK_THROWS_AS(g.skip_conv2d(x, k, b, {1, 0}, {0, 1}), std::invalid_argument);
}

TEST_CASE("embedding: identity table and duplicate ids") {
    Graph g;
    NodeId table = g.parameter(Tensor::of_f32({2, 2}, {1, 0, 0, 1}));
    NodeId one = g.embedding(g.input(Tensor::of_i64({1}, {0})), table);
    CHECK(g.value(one).f32() == std::vector<float>{1, 0});

    Rng rng(5);
    NodeId t2 = g.parameter(oracle::random_tensor({6, 3}, rng, DType::f32));
    NodeId two = g.embedding(g.input(Tensor::of_i64({2}, {3, 3})), t2);
    const auto& v = g.value(two).f32();
    CHECK(std::vector<float>(v.begin(), v.begin() + 3) == std::vector<float>(v.begin() + 3, v.end()));
}

TEST_CASE("embedding: matches gather oracle exactly; id bounds enforced") {
    Rng rng(6);
    Tensor table = oracle::random_tensor({9, 4}, rng, DType::f32);
    std::vector<int64_t> ids = {4, 0, 8, 2, 2};
    Graph g;
    NodeId y = g.embedding(g.input(Tensor::of_i64({5}, ids)), g.parameter(table));
    CHECK(g.value(y).same_bits(oracle::embedding(ids, table)));
    CHECK_THROWS_AS(g.embedding(g.input(Tensor::of_i64({1}, {9})), g.parameter(table)),
                    std::out_of_range);
}

TEST_CASE("skip_embedding: definition, empty skip, and length law") {
    Rng rng(8);
    Tensor table = oracle::random_tensor({12, 3}, rng, DType::f32);
    Graph g;
    NodeId t = g.parameter(table);

    NodeId basic = g.skip_embedding(g.input(Tensor::of_i64({3}, {5, 9, 2})), t, {1});
    CHECK(g.value(basic).same_bits(oracle::embedding({5, 2}, table)));

    std::vector<int64_t> ids(25);
    for (size_t i = 0; i < ids.size(); ++i) ids[i] = int64_t(i % 12);
    NodeId noskip = g.skip_embedding(g.input(Tensor::of_i64({25}, ids)), t, {});
    NodeId plain = g.embedding(g.input(Tensor::of_i64({25}, ids)), t);
    CHECK(g.value(noskip).same_bits(g.value(plain)));

    NodeId trimmed = g.skip_embedding(g.input(Tensor::of_i64({25}, ids)), t, {3, 7, 11, 19, 24});
    CHECK(g.value(trimmed).dim(0) == 20);
}

TEST_CASE("backward: linear loss gives grad(w) = x") {
    Tensor x = Tensor::of_f64({3}, {2.0, -1.0, 0.5});
    Graph g(DType::f64);
    NodeId xn = g.input(x);
    NodeId w = g.parameter(Tensor::of_f64({1, 3}, {0.3, 0.7, -0.2}));
    NodeId b = g.parameter(Tensor::of_f64({1}, {0.0}));
    NodeId loss = g.linear(xn, w, b);
    GradStore grads = g.backward(loss);
    CHECK(grads.at(w).f64() == std::vector<double>{2.0, -1.0, 0.5});
    CHECK(grads.at(b).f64() == std::vector<double>{1.0});
}

TEST_CASE("backward: skip_conv2d input gradient is exactly zero at skipped cells") {
    Rng rng(21);
    Tensor x = oracle::random_tensor({1, 5, 5}, rng, DType::f64);
    Graph g(DType::f64);
    NodeId xn = g.input(x, /*requires_grad=*/true);
    NodeId k = g.parameter(oracle::random_tensor({2, 1, 2, 2}, rng, DType::f64));
    NodeId b = g.parameter(oracle::random_tensor({2}, rng, DType::f64));
    const std::vector<int64_t> rows = {0, 2, 3}, cols = {1, 2, 4};
    NodeId y = g.skip_conv2d(xn, k, b, rows, cols);
    NodeId loss = gradcheck::scalarize(g, y, oracle::random_tensor({1, g.value(y).numel()}, rng));
    g.backward(loss);
    Tensor dx = g.grad_of(xn);
    double kept_sum = 0;
    for (int64_t r = 0; r < 5; ++r)
        for (int64_t c = 0; c < 5; ++c) {
            const bool kept = (r == 0 || r == 2 || r == 3) && (c == 1 || c == 2 || c == 4);
            if (!kept)
                CHECK(dx.f64()[size_t(r * 5 + c)] == 0.0);
            else
                kept_sum += std::abs(dx.f64()[size_t(r * 5 + c)]);
        }
    CHECK(kept_sum > 0.0);
}

TEST_CASE("backward: rejects non-scalar loss") {
    Graph g;
    NodeId x = g.parameter(Tensor::of_f32({2}, {1, 2}));
    NodeId y = g.relu(x);
    CHECK_THROWS_AS(g.backward(y), std::invalid_argument);
}

TEST_CASE("backward: detach isolates parameters exactly") {
    Rng rng(31);
    Graph g(DType::f64);
    NodeId a = g.parameter(oracle::random_tensor({4}, rng));
    NodeId w = g.parameter(oracle::random_tensor({1, 4}, rng));
    NodeId b = g.parameter(oracle::random_tensor({1}, rng));
    // a reaches the loss only through detach; w, b flow normally.
    NodeId loss = g.linear(g.detach(g.relu(a)), w, b);
    GradStore grads = g.backward(loss);
    for (double v : grads.at(a).f64()) CHECK(v == 0.0);
    bool some_nonzero = false;
    for (double v : grads.at(w).f64()) some_nonzero = some_nonzero || v != 0.0;
    CHECK(some_nonzero);
}

TEST_CASE("backward: softmax bias gradient is p - onehot with unique negative at the label") {
    Rng rng(41);
    for (int trial = 0; trial < 10; ++trial) {
        const int64_t k = 3 + int64_t(rng.next_below(4));
        const int64_t label = int64_t(rng.next_below(uint64_t(k)));
        Tensor x = oracle::random_tensor({2}, rng);
        Graph g(DType::f64);
        NodeId xn = g.input(x);
        NodeId w = g.parameter(oracle::random_tensor({k, 2}, rng));
        NodeId b = g.parameter(oracle::random_tensor({k}, rng));
        NodeId logits = g.linear(xn, w, b);
        NodeId loss = g.softmax_xent(logits, label);
        GradStore grads = g.backward(loss);

        // Reference softmax.
        std::vector<double> z = g.value(logits).f64();
        double m = *std::max_element(z.begin(), z.end());
        double sum = 0;
        for (double& v : z) {
            v = std::exp(v - m);
            sum += v;
        }
        int negatives = 0;
        for (int64_t i = 0; i < k; ++i) {
            const double expect = z[size_t(i)] / sum - (i == label ? 1.0 : 0.0);
            CHECK(grads.at(b).f64()[size_t(i)] == doctest::Approx(expect).epsilon(1e-12));
            if (grads.at(b).f64()[size_t(i)] < 0) ++negatives;
        }
        CHECK(negatives == 1);
        CHECK(grads.at(b).f64()[size_t(label)] < 0);
    }
}

TEST_CASE("gradcheck: every op kind passes central finite differences at 1e-4") {
    for (const auto& check : gradcheck::run_all(5)) {
        INFO(check.op);
        CHECK(check.worst < 1e-4);
    }
}

TEST_CASE("sgd_step: arithmetic, zero gradient, and missing gradient") {
    Graph g;
    NodeId p = g.parameter(Tensor::of_f32({1}, {1.0f}));
    GradStore grads;
    grads.grads.emplace(p, Tensor::of_f32({1}, {0.5f}));
    g.sgd_step(grads, 0.1);
    CHECK(g.value(p).f32()[0] == doctest::Approx(0.95f));

    Tensor before = g.value(p);
    grads.grads.at(p).f32()[0] = 0.0f;
    g.sgd_step(grads, 0.37);
    CHECK(g.value(p).same_bits(before));

    NodeId q = g.parameter(Tensor::of_f32({1}, {2.0f}));
    (void)q;
    CHECK_THROWS_AS(g.sgd_step(grads, 0.1), std::runtime_error);
    CHECK_THROWS_AS(g.sgd_step(grads, 0.0), std::invalid_argument);
}

TEST_CASE("sgd_step: one step on a 2-parameter linear model matches the hand-rolled update") {
    // logits = W x + b, loss = xent(logits, 0); dW = (p - onehot) x^T, db = p - onehot.
    const double x0 = 0.8, w0 = 0.4, w1 = -0.3, b0 = 0.1, b1 = -0.2, lr = 0.05;
    Graph g(DType::f64);
    NodeId xn = g.input(Tensor::of_f64({1}, {x0}));
    NodeId w = g.parameter(Tensor::of_f64({2, 1}, {w0, w1}));
    NodeId b = g.parameter(Tensor::of_f64({2}, {b0, b1}));
    NodeId loss = g.softmax_xent(g.linear(xn, w, b), 0);
    GradStore grads = g.backward(loss);
    g.sgd_step(grads, lr);

    const double z0 = w0 * x0 + b0, z1 = w1 * x0 + b1;
    const double m = std::max(z0, z1);
    const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
    const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
    CHECK(g.value(w).f64()[0] == doctest::Approx(w0 - lr * (p0 - 1.0) * x0).epsilon(1e-12));
    CHECK(g.value(w).f64()[1] == doctest::Approx(w1 - lr * p1 * x0).epsilon(1e-12));
    CHECK(g.value(b).f64()[0] == doctest::Approx(b0 - lr * (p0 - 1.0)).epsilon(1e-12));
    CHECK(g.value(b).f64()[1] == doctest::Approx(b1 - lr * p1).epsilon(1e-12));
}

TEST_CASE("determinism: identical graphs produce bit-identical values and gradients") {
    auto build = [] {
        Rng rng(99);
        Graph g;
        NodeId x = g.input(oracle::random_tensor({1, 6, 6}, rng, DType::f32));
        NodeId k = g.parameter(oracle::random_tensor({2, 1, 3, 3}, rng, DType::f32));
        NodeId b = g.parameter(oracle::random_tensor({2}, rng, DType::f32));
        NodeId y = g.maxpool2d(g.relu(g.conv2d(x, k, b)), 2);
        NodeId w = g.parameter(oracle::random_tensor({3, g.value(y).numel()}, rng, DType::f32));
        NodeId b2 = g.parameter(oracle::random_tensor({3}, rng, DType::f32));
        NodeId loss = g.softmax_xent(g.linear(g.flatten(y), w, b2), 1);
        GradStore grads = g.backward(loss);
        return std::make_pair(g.value(loss), grads.at(k));
    };
    auto [l1, g1] = build();
    auto [l2, g2] = build();
    CHECK(l1.same_bits(l2));
    CHECK(g1.same_bits(g2));
}
