#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "amalgam/executor.hpp"
#include "amalgam/secret.hpp"

namespace amalgam {

// Gradients keyed by (layer id, param name) — what a training server sees
// for a single sample.
using NamedGrads = std::map<std::pair<std::string, std::string>, Tensor>;

inline NamedGrads sample_gradients(const ModelGraph& model, const ParamStore& params,
                                   const Tensor& sample, int64_t label,
                                   DType dtype = DType::f64) {
    Executor exec(model);
    Executor::Run run = exec.forward(params, sample, dtype);
    const NodeId loss = Executor::total_loss(run, label);
    GradStore grads = run.engine.backward(loss);
    NamedGrads out;
    for (const auto& [key, node] : run.param_nodes) out.emplace(key, grads.at(node));
    return out;
}

struct AttackConfig {
    int iterations = 200;
    double step = 0.1;        // initial gradient-descent step
    uint64_t seed = 0;        // dummy-input init
    int64_t sample_index = 0;
    double fd_step = 1e-3;    // central-difference step over the dummy input

    void validate() const {
        if (iterations < 1) throw std::invalid_argument("attack: iterations must be >= 1");
        if (!(step > 0) || !(fd_step > 0))
            throw std::invalid_argument("attack: step sizes must be > 0");
    }
};

struct AttackResult {
    Tensor reconstructed;
    int64_t inferred_label = -1;
    std::vector<double> objective_history;  // objective at the start of each iteration
    double mse_original_region = -1;
    int iterations_run = 0;
};

// Label inference from a single-sample gradient: the bias gradient of a
// softmax cross-entropy head is p - onehot(y), whose only negative
// component sits at the true label.
inline int64_t idlg_label(const NamedGrads& victim_grads, const ModelGraph& model,
                          size_t head_index) {
    if (head_index >= model.heads.size())
        throw std::invalid_argument("idlg: head index out of range");
    const LayerSpec& head = model.layer(model.heads[head_index]);
    if (head.kind != "linear")
        throw std::invalid_argument("idlg: head layer '" + head.id + "' is not linear");
    auto it = victim_grads.find({head.id, "bias"});
    if (it == victim_grads.end())
        throw std::invalid_argument("idlg: no bias gradient for head '" + head.id + "'");
    const Tensor& g = it->second;
    int64_t label = -1;
    int negatives = 0;
    for (int64_t i = 0; i < g.numel(); ++i)
        if (g.get_flat(i) < 0) {
            ++negatives;
            label = i;
        }
    if (negatives != 1)
        throw std::runtime_error("idlg: bias gradient has " + std::to_string(negatives) +
                                 " negative components, cannot identify the label");
    return label;
}

namespace detail {

inline double grads_distance_sq(const NamedGrads& a, const NamedGrads& b) {
    double s = 0;
    auto ia = a.begin();
    for (; ia != a.end(); ++ia) {
        const Tensor& ta = ia->second;
        const Tensor& tb = b.at(ia->first);
        for (int64_t i = 0; i < ta.numel(); ++i) {
            const double d = ta.get_flat(i) - tb.get_flat(i);
            s += d * d;
        }
    }
    return s;
}

inline double mse_between(const Tensor& a, const Tensor& b) {
    double s = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = a.get_flat(i) - b.get_flat(i);
        s += d * d;
    }
    return s / double(a.numel());
}

// Kept-region view of a reconstructed image/sequence.
inline Tensor gather_original_region(const Tensor& x, const PositionSecret& secret) {
    if (secret.modality == "image") {
        const int64_t c = x.dim(0);
        const int64_t h = int64_t(secret.kept_rows.size()), w = int64_t(secret.kept_cols.size());
        Tensor out = Tensor::zeros({c, h, w}, x.dtype());
        for (int64_t cc = 0; cc < c; ++cc)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t xx = 0; xx < w; ++xx)
                    out.set_flat((cc * h + y) * w + xx,
                                 x.get_flat((cc * x.dim(1) + secret.kept_rows[size_t(y)]) * x.dim(2) +
                                            secret.kept_cols[size_t(xx)]));
        return out;
    }
    const int64_t len = int64_t(secret.kept_positions.size());
    Tensor out = Tensor::zeros({len}, x.dtype());
    for (int64_t i = 0; i < len; ++i) out.set_flat(i, x.get_flat(secret.kept_positions[size_t(i)]));
    return out;
}

}  // namespace detail

// Gradient-matching input reconstruction: starting from a seeded random
// dummy, descend || grad(dummy, label) - victim ||^2 with central finite
// differences over the dummy cells and backtracking step halving, so the
// recorded objective never increases. The label comes from idlg_label.
// ground_truth (and, for augmented setups, the position secret) is used
// only to score the final reconstruction.
inline AttackResult dlg_reconstruct(const ModelGraph& model, const ParamStore& params,
                                    const NamedGrads& victim_grads, int64_t label,
                                    const AttackConfig& cfg,
                                    const Tensor* ground_truth = nullptr,
                                    const PositionSecret* secret = nullptr,
                                    const Tensor* init_dummy = nullptr) {
    cfg.validate();
    if (model.input.modality != "image")
        throw std::invalid_argument("attack: reconstruction supports image inputs");

    NamedGrads victim;
    for (const auto& [k, t] : victim_grads) victim.emplace(k, t.to_dtype(DType::f64));

    Tensor x;
    if (init_dummy) {
        if (init_dummy->shape() != model.input.shape)
            throw std::invalid_argument("attack: init dummy shape mismatch");
        x = init_dummy->to_dtype(DType::f64);
    } else {
        x = Tensor::zeros(model.input.shape, DType::f64);
        Rng rng(mix_seed(cfg.seed, hash_name("dlg-dummy")));
        double* p = x.f64().data();
        for (int64_t i = 0; i < x.numel(); ++i) p[i] = rng.uniform(0.0, 1.0);
    }
    auto objective = [&](const Tensor& probe) {
        return detail::grads_distance_sq(sample_gradients(model, params, probe, label, DType::f64),
                                         victim);
    };

    AttackResult result;
    result.inferred_label = label;
    double obj = objective(x);
    Tensor grad = Tensor::zeros(x.shape(), DType::f64);
    for (int it = 0; it < cfg.iterations; ++it) {
        result.objective_history.push_back(obj);
        ++result.iterations_run;
        if (!std::isfinite(obj)) break;

        double* gp = grad.f64().data();
        double* xp = x.f64().data();
        for (int64_t i = 0; i < x.numel(); ++i) {
            const double keep = xp[i];
            xp[i] = keep + cfg.fd_step;
            const double up = objective(x);
            xp[i] = keep - cfg.fd_step;
            const double down = objective(x);
            xp[i] = keep;
            gp[i] = (up - down) / (2.0 * cfg.fd_step);
        }

        // Fresh backtracking line search every iteration; the accepted
        // objective never increases.
        double step = cfg.step;
        for (int halving = 0; halving < 24; ++halving) {
            Tensor candidate = x;
            double* cp = candidate.f64().data();
            for (int64_t i = 0; i < x.numel(); ++i) cp[i] -= step * gp[i];
            const double cobj = objective(candidate);
            if (cobj <= obj) {
                x = std::move(candidate);
                obj = cobj;
                break;
            }
            step *= 0.5;
        }
    }

    result.reconstructed = x;
    if (ground_truth) {
        const Tensor gt = ground_truth->to_dtype(DType::f64);
        if (secret) {
            result.mse_original_region =
                detail::mse_between(detail::gather_original_region(x, *secret), gt);
        } else {
            result.mse_original_region = detail::mse_between(x, gt);
        }
    }
    return result;
}

}  // namespace amalgam
