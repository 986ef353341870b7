#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "amalgam/dataset.hpp"
#include "amalgam/executor.hpp"

namespace amalgam {

struct TrainConfig {
    int epochs = 10;
    double lr = 0.001;
    int batch = 128;
    uint64_t seed = 0;
    bool deterministic = true;
};

struct StepRecord {
    int64_t epoch = 0;
    int64_t step = 0;
    double loss_total = 0;
    std::vector<double> loss_heads;
    std::vector<double> acc_heads;
    int64_t wall_ms = 0;
};

struct MetricsLog {
    size_t head_count = 1;
    bool deterministic = true;
    std::vector<StepRecord> records;

    // CSV: epoch,step,loss_total,loss_h0,...,acc_h0,...,wall_ms
    std::string to_csv() const {
        std::string out = "epoch,step,loss_total";
        for (size_t h = 0; h < head_count; ++h) out += ",loss_h" + std::to_string(h);
        for (size_t h = 0; h < head_count; ++h) out += ",acc_h" + std::to_string(h);
        out += ",wall_ms\n";
        char buf[64];
        for (const auto& r : records) {
            out += std::to_string(r.epoch) + "," + std::to_string(r.step);
            std::snprintf(buf, sizeof(buf), ",%.9g", r.loss_total);
            out += buf;
            for (double v : r.loss_heads) {
                std::snprintf(buf, sizeof(buf), ",%.9g", v);
                out += buf;
            }
            for (double v : r.acc_heads) {
                std::snprintf(buf, sizeof(buf), ",%.9g", v);
                out += buf;
            }
            out += "," + std::to_string(r.wall_ms) + "\n";
        }
        return out;
    }
};

namespace detail {

inline void add_into_f32(Tensor& acc, const Tensor& g) {
    float* a = acc.f32().data();
    const float* b = g.f32().data();
    for (int64_t i = 0; i < acc.numel(); ++i) a[i] += b[i];
}

inline void scale_f32(Tensor& t, float f) {
    float* a = t.f32().data();
    for (int64_t i = 0; i < t.numel(); ++i) a[i] *= f;
}

inline int64_t argmax(const Tensor& t) {
    int64_t best = 0;
    double bv = t.get_flat(0);
    for (int64_t i = 1; i < t.numel(); ++i)
        if (t.get_flat(i) > bv) {
            bv = t.get_flat(i);
            best = i;
        }
    return best;
}

inline std::vector<int64_t> epoch_permutation(uint64_t seed, int64_t epoch, int64_t n) {
    std::vector<int64_t> perm(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) perm[size_t(i)] = i;
    Rng rng(mix_seed(mix_seed(seed, hash_name("shuffle")), uint64_t(epoch)));
    for (int64_t i = 0; i + 1 < n; ++i) {
        const int64_t j = i + int64_t(rng.next_below(uint64_t(n - i)));
        std::swap(perm[size_t(i)], perm[size_t(j)]);
    }
    return perm;
}

}  // namespace detail

// Minibatch SGD against the sum of per-head cross-entropy losses. Batch
// order is a seeded permutation per epoch that depends only on (seed,
// epoch, N), so differently augmented versions of the same dataset are
// consumed in the same sample order. Gradients are the batch mean,
// accumulated sample by sample in permutation order; the update runs in
// sorted (layer, param) order. Everything is sequential, so a fixed seed
// reproduces results bit for bit. In deterministic mode wall_ms is logged
// as zero to keep the metrics byte-reproducible.
inline std::pair<ParamStore, MetricsLog> train(const ModelGraph& graph, ParamStore params,
                                               const DatasetContainer& data,
                                               const TrainConfig& cfg) {
    if (!(cfg.lr > 0)) throw std::invalid_argument("train: learning rate must be > 0");
    if (cfg.batch < 1) throw std::invalid_argument("train: batch size must be >= 1");
    if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    data.validate();
    if (data.meta.modality != graph.input.modality)
        throw std::invalid_argument("train: dataset modality '" + data.meta.modality +
                                    "' does not match model input '" + graph.input.modality + "'");

    Executor exec(graph);
    const int64_t n = data.size();
    const size_t heads = graph.heads.size();

    MetricsLog log;
    log.head_count = heads;
    log.deterministic = cfg.deterministic;

    std::map<std::pair<std::string, std::string>, Tensor> accum;
    for (const auto& [key, t] : params.values) accum.emplace(key, Tensor::zeros(t.shape(), t.dtype()));

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::vector<int64_t> perm = detail::epoch_permutation(cfg.seed, epoch, n);
        int64_t step = 0;
        for (int64_t start = 0; start < n; start += cfg.batch, ++step) {
            const int64_t bsz = std::min<int64_t>(cfg.batch, n - start);
            const auto t0 = std::chrono::steady_clock::now();

            for (auto& [key, t] : accum) detail::scale_f32(t, 0.0f);
            StepRecord rec;
            rec.epoch = epoch;
            rec.step = step;
            rec.loss_heads.assign(heads, 0.0);
            rec.acc_heads.assign(heads, 0.0);

            for (int64_t b = 0; b < bsz; ++b) {
                const int64_t idx = perm[size_t(start + b)];
                Executor::Run run = exec.forward(params, data.sample(idx));
                const int64_t label = data.label(idx);

                NodeId loss = -1;
                for (size_t h = 0; h < heads; ++h) {
                    const NodeId head = run.head_nodes[h];
                    if (detail::argmax(run.engine.value(head)) == label) rec.acc_heads[h] += 1.0;
                    const NodeId ce = run.engine.softmax_xent(head, label);
                    rec.loss_heads[h] += run.engine.value(ce).get_flat(0);
                    loss = loss < 0 ? ce : run.engine.add(loss, ce);
                }
                rec.loss_total += run.engine.value(loss).get_flat(0);

                GradStore grads = run.engine.backward(loss);
                for (const auto& [key, node] : run.param_nodes)
                    detail::add_into_f32(accum.at(key), grads.at(node));
            }

            rec.loss_total /= double(bsz);
            for (auto& v : rec.loss_heads) v /= double(bsz);
            for (auto& v : rec.acc_heads) v /= double(bsz);
            if (!std::isfinite(rec.loss_total))
                throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                         " step " + std::to_string(step));

            const float inv_batch = float(1.0 / double(bsz));
            for (auto& [key, t] : accum) detail::scale_f32(t, inv_batch);
            for (auto& [key, t] : params.values) detail::sgd_axpy(t, accum.at(key), cfg.lr);

            if (!cfg.deterministic) {
                rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                  std::chrono::steady_clock::now() - t0)
                                  .count();
            }
            log.records.push_back(std::move(rec));
        }
    }
    return {std::move(params), std::move(log)};
}

// Mean cross-entropy and top-1 accuracy of one head, no parameter updates.
inline std::pair<double, double> evaluate(const ModelGraph& graph, const ParamStore& params,
                                          const DatasetContainer& data, size_t head_index = 0) {
    data.validate();
    if (head_index >= graph.heads.size())
        throw std::invalid_argument("evaluate: head index " + std::to_string(head_index) +
                                    " out of range (model has " +
                                    std::to_string(graph.heads.size()) + " heads)");
    Executor exec(graph);
    double loss = 0, correct = 0;
    const int64_t n = data.size();
    for (int64_t i = 0; i < n; ++i) {
        Executor::Run run = exec.forward(params, data.sample(i));
        const NodeId head = run.head_nodes[head_index];
        const int64_t label = data.label(i);
        if (detail::argmax(run.engine.value(head)) == label) correct += 1.0;
        const NodeId ce = run.engine.softmax_xent(head, label);
        loss += run.engine.value(ce).get_flat(0);
    }
    return {loss / double(n), correct / double(n)};
}

}  // namespace amalgam
