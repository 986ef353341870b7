#pragma once

// Independent reference implementations used as test oracles. These are
// written straight from the definitions and deliberately share no code with
// the engine kernels: padding is materialized, accumulation is double, and
// loop structure differs.

#include <cmath>
#include <cstdint>
#include <vector>

#include "amalgam/autodiff.hpp"
#include "amalgam/rng.hpp"
#include "amalgam/tensor.hpp"

namespace oracle {

using amalgam::Tensor;

// Cross-correlation with explicit zero-padding materialization.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                     int64_t stride, int64_t padding) {
    const int64_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int64_t o = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    const int64_t hp = h + 2 * padding, wp = w + 2 * padding;

    std::vector<double> padded(size_t(c * hp * wp), 0.0);
    for (int64_t cc = 0; cc < c; ++cc)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                padded[size_t((cc * hp + y + padding) * wp + x + padding)] =
                    input.get_flat((cc * h + y) * w + x);

    const int64_t ho = (hp - kh) / stride + 1, wo = (wp - kw) / stride + 1;
    Tensor out = Tensor::zeros({o, ho, wo}, amalgam::DType::f64);
    for (int64_t oc = 0; oc < o; ++oc)
        for (int64_t oy = 0; oy < ho; ++oy)
            for (int64_t ox = 0; ox < wo; ++ox) {
                double acc = bias.get_flat(oc);
                for (int64_t cc = 0; cc < c; ++cc)
                    for (int64_t ky = 0; ky < kh; ++ky)
                        for (int64_t kx = 0; kx < kw; ++kx)
                            acc += kernel.get_flat(((oc * c + cc) * kh + ky) * kw + kx) *
                                   padded[size_t((cc * hp + oy * stride + ky) * wp + ox * stride + kx)];
                out.set_flat((oc * ho + oy) * wo + ox, acc);
            }
    return out;
}

// Row/column gather of a [C,H,W] tensor.
inline Tensor gather(const Tensor& input, const std::vector<int64_t>& rows,
                     const std::vector<int64_t>& cols) {
    const int64_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int64_t r = int64_t(rows.size()), s = int64_t(cols.size());
    Tensor out = Tensor::zeros({c, r, s}, input.dtype());
    for (int64_t cc = 0; cc < c; ++cc)
        for (int64_t y = 0; y < r; ++y)
            for (int64_t x = 0; x < s; ++x)
                out.set_flat((cc * r + y) * s + x,
                             input.get_flat((cc * h + rows[size_t(y)]) * w + cols[size_t(x)]));
    return out;
}

// Per-row table gather.
inline Tensor embedding(const std::vector<int64_t>& ids, const Tensor& table) {
    const int64_t e = table.dim(1);
    Tensor out = Tensor::zeros({int64_t(ids.size()), e}, table.dtype());
    for (size_t i = 0; i < ids.size(); ++i)
        for (int64_t j = 0; j < e; ++j)
            out.set_flat(int64_t(i) * e + j, table.get_flat(ids[i] * e + j));
    return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double worst = 0;
    for (int64_t i = 0; i < a.numel(); ++i)
        worst = std::max(worst, std::abs(a.get_flat(i) - b.get_flat(i)));
    return worst;
}

inline Tensor random_tensor(std::vector<int64_t> shape, amalgam::Rng& rng,
                            amalgam::DType dt = amalgam::DType::f64, double lo = -1.0,
                            double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape), dt);
    for (int64_t i = 0; i < t.numel(); ++i) t.set_flat(i, rng.uniform(lo, hi));
    return t;
}

// ---------------------------------------------------------------------------
// Central finite-difference gradient checking (float64).
//
// build(graph, leaves, out_ids) registers every leaf (in order) in the
// graph, stores their node ids, and returns the scalar loss node.

template <class BuildFn>
double loss_value(const std::vector<Tensor>& leaves, BuildFn&& build) {
    amalgam::Graph g(amalgam::DType::f64);
    std::vector<amalgam::NodeId> ids;
    const amalgam::NodeId loss = build(g, leaves, ids);
    return g.value(loss).get_flat(0);
}

// Largest relative error between analytic and finite-difference gradients
// over every element of every checked leaf.
template <class AnalyticFn, class FdFn>
double fd_max_rel_error_dual(std::vector<Tensor> leaves, AnalyticFn&& analytic_build,
                             FdFn&& fd_build, const std::vector<size_t>& check_leaves,
                             double h = 1e-5) {
    amalgam::Graph g(amalgam::DType::f64);
    std::vector<amalgam::NodeId> ids;
    const amalgam::NodeId loss = analytic_build(g, leaves, ids);
    g.backward(loss);

    double worst = 0;
    for (size_t li : check_leaves) {
        const Tensor grad = g.grad_of(ids[li]);
        for (int64_t i = 0; i < leaves[li].numel(); ++i) {
            const double keep = leaves[li].get_flat(i);
            leaves[li].set_flat(i, keep + h);
            const double up = loss_value(leaves, fd_build);
            leaves[li].set_flat(i, keep - h);
            const double down = loss_value(leaves, fd_build);
            leaves[li].set_flat(i, keep);
            const double fd = (up - down) / (2.0 * h);
            const double a = grad.get_flat(i);
            const double denom = std::max({std::abs(a), std::abs(fd), 1e-6});
            worst = std::max(worst, std::abs(a - fd) / denom);
        }
    }
    return worst;
}

template <class BuildFn>
double fd_max_rel_error(std::vector<Tensor> leaves, BuildFn&& build,
                        const std::vector<size_t>& check_leaves, double h = 1e-5) {
    return fd_max_rel_error_dual(std::move(leaves), build, build, check_leaves, h);
}

}  // namespace oracle
