#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "amalgam/tensor.hpp"

namespace amalgam {

enum class OpKind : uint8_t {
    input,
    parameter,
    linear,
    conv2d,
    skip_conv2d,
    embedding,
    skip_embedding,
    relu,
    maxpool2d,
    avgpool2d,
    flatten,
    add,
    mean_seq,
    softmax_xent,
    detach,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::input: return "input";
        case OpKind::parameter: return "parameter";
        case OpKind::linear: return "linear";
        case OpKind::conv2d: return "conv2d";
        case OpKind::skip_conv2d: return "skip_conv2d";
        case OpKind::embedding: return "embedding";
        case OpKind::skip_embedding: return "skip_embedding";
        case OpKind::relu: return "relu";
        case OpKind::maxpool2d: return "maxpool2d";
        case OpKind::avgpool2d: return "avgpool2d";
        case OpKind::flatten: return "flatten";
        case OpKind::add: return "add";
        case OpKind::mean_seq: return "mean_seq";
        case OpKind::softmax_xent: return "softmax_xent";
        case OpKind::detach: return "detach";
    }
    return "?";
}

struct OpAttrs {
    int64_t stride = 1;
    int64_t padding = 0;
    int64_t pool = 2;
    int64_t label = -1;                    // softmax_xent target class
    std::vector<int64_t> keep_rows;        // skip_conv2d
    std::vector<int64_t> keep_cols;        // skip_conv2d
    std::vector<int64_t> skip_positions;   // skip_embedding
};

using NodeId = int32_t;

struct GraphNode {
    OpKind kind;
    std::vector<NodeId> inputs;
    OpAttrs attrs;
    Tensor value;
    Tensor grad;                    // valid while has_grad
    bool has_grad = false;
    bool needs_grad = false;        // some leaf below requires a gradient
    Tensor scratch;                 // softmax probs / gathered conv input
    std::vector<int64_t> iarg;      // maxpool argmax
};

// Gradients of parameter nodes after a backward pass. Unreachable parameters
// hold zero tensors.
struct GradStore {
    std::map<NodeId, Tensor> grads;

    const Tensor& at(NodeId id) const {
        auto it = grads.find(id);
        if (it == grads.end())
            throw std::runtime_error("grad store: no entry for node " + std::to_string(id));
        return it->second;
    }
};

namespace detail {

inline int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

template <class T>
void linear_fwd(const T* x, const T* w, const T* b, T* y, int64_t out, int64_t in) {
    for (int64_t o = 0; o < out; ++o) {
        T acc = b[o];
        const T* wr = w + o * in;
        for (int64_t i = 0; i < in; ++i) acc += wr[i] * x[i];
        y[o] = acc;
    }
}

template <class T>
void linear_bwd(const T* x, const T* w, const T* dy, T* dx, T* dw, T* db, int64_t out, int64_t in) {
    for (int64_t o = 0; o < out; ++o) {
        const T g = dy[o];
        const T* wr = w + o * in;
        T* dwr = dw ? dw + o * in : nullptr;
        if (db) db[o] += g;
        for (int64_t i = 0; i < in; ++i) {
            if (dwr) dwr[i] += g * x[i];
            if (dx) dx[i] += g * wr[i];
        }
    }
}

template <class T>
void conv2d_fwd(const T* x, const T* k, const T* b, T* y, int64_t C, int64_t H, int64_t W,
                int64_t O, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
                int64_t Ho, int64_t Wo) {
    for (int64_t o = 0; o < O; ++o) {
        for (int64_t oy = 0; oy < Ho; ++oy) {
            for (int64_t ox = 0; ox < Wo; ++ox) {
                T acc = b ? b[o] : T(0);
                for (int64_t c = 0; c < C; ++c) {
                    const T* xc = x + c * H * W;
                    const T* kc = k + (o * C + c) * kh * kw;
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        const int64_t iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const int64_t ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= W) continue;
                            acc += kc[ky * kw + kx] * xc[iy * W + ix];
                        }
                    }
                }
                y[(o * Ho + oy) * Wo + ox] = acc;
            }
        }
    }
}

template <class T>
void conv2d_bwd(const T* x, const T* k, const T* dy, T* dx, T* dk, T* db, int64_t C, int64_t H,
                int64_t W, int64_t O, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
                int64_t Ho, int64_t Wo) {
    for (int64_t o = 0; o < O; ++o) {
        for (int64_t oy = 0; oy < Ho; ++oy) {
            for (int64_t ox = 0; ox < Wo; ++ox) {
                const T g = dy[(o * Ho + oy) * Wo + ox];
                if (db) db[o] += g;
                for (int64_t c = 0; c < C; ++c) {
                    const T* xc = x + c * H * W;
                    const T* kc = k + (o * C + c) * kh * kw;
                    T* dxc = dx ? dx + c * H * W : nullptr;
                    T* dkc = dk ? dk + (o * C + c) * kh * kw : nullptr;
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        const int64_t iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const int64_t ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= W) continue;
                            if (dkc) dkc[ky * kw + kx] += g * xc[iy * W + ix];
                            if (dxc) dxc[iy * W + ix] += g * kc[ky * kw + kx];
                        }
                    }
                }
            }
        }
    }
}

// theta -= lr * g, elementwise, in the tensor's own precision.
inline void sgd_axpy(Tensor& theta, const Tensor& g, double lr) {
    if (!theta.is_floating() || theta.dtype() != g.dtype() || theta.shape() != g.shape())
        throw std::runtime_error("sgd: parameter/gradient mismatch " + shape_str(theta.shape()) +
                                 " vs " + shape_str(g.shape()));
    if (theta.dtype() == DType::f32) {
        float* t = theta.f32().data();
        const float* gd = g.f32().data();
        const float lrf = float(lr);
        for (int64_t i = 0; i < theta.numel(); ++i) t[i] -= lrf * gd[i];
    } else {
        double* t = theta.f64().data();
        const double* gd = g.f64().data();
        for (int64_t i = 0; i < theta.numel(); ++i) t[i] -= lr * gd[i];
    }
}

inline void validate_index_set(const std::vector<int64_t>& set, int64_t bound, const char* op,
                               const char* what) {
    if (set.empty())
        throw std::invalid_argument(std::string(op) + ": empty " + what + " set");
    int64_t prev = -1;
    for (int64_t v : set) {
        if (v < 0 || v >= bound)
            throw std::out_of_range(std::string(op) + ": " + what + " index " + std::to_string(v) +
                                    " outside [0," + std::to_string(bound) + ")");
        if (v <= prev)
            throw std::invalid_argument(std::string(op) + ": " + what + " set not sorted/unique");
        prev = v;
    }
}

}  // namespace detail

// Dynamically built computation graph with eager forward evaluation and
// reverse-mode backward. All floating values share one compute dtype;
// token-id tensors stay i64. Node ids grow monotonically, and backward
// accumulates in fixed reverse-id order, so results are bit-reproducible.
class Graph {
public:
    explicit Graph(DType dt = DType::f32) : dtype_(dt) {
        if (dt == DType::i64) throw std::invalid_argument("graph: compute dtype must be floating");
    }

    DType dtype() const { return dtype_; }
    size_t size() const { return nodes_.size(); }

    const Tensor& value(NodeId id) const { return node(id).value; }

    // Gradient of any node after backward(); zeros if the node was not touched.
    Tensor grad_of(NodeId id) const {
        const GraphNode& n = node(id);
        if (n.has_grad) return n.grad;
        return Tensor::zeros(n.value.shape(), n.value.dtype());
    }

    NodeId input(Tensor v, bool requires_grad = false) {
        if (v.is_floating() && v.dtype() != dtype_)
            throw std::invalid_argument("input: dtype " + std::string(dtype_name(v.dtype())) +
                                        " does not match graph dtype");
        if (requires_grad && !v.is_floating())
            throw std::invalid_argument("input: integer tensors cannot require gradients");
        GraphNode n;
        n.kind = OpKind::input;
        n.needs_grad = requires_grad;
        n.value = std::move(v);
        return push(std::move(n));
    }

    NodeId parameter(Tensor v) {
        if (!v.is_floating() || v.dtype() != dtype_)
            throw std::invalid_argument("parameter: tensor must use the graph compute dtype");
        GraphNode n;
        n.kind = OpKind::parameter;
        n.needs_grad = true;
        n.value = std::move(v);
        param_ids_.push_back(NodeId(nodes_.size()));
        return push(std::move(n));
    }

    NodeId linear(NodeId x, NodeId w, NodeId b) {
        const Tensor& xv = val_checked(x, "linear");
        const Tensor& wv = val_checked(w, "linear");
        const Tensor& bv = val_checked(b, "linear");
        if (xv.rank() != 1 || wv.rank() != 2 || bv.rank() != 1)
            throw std::invalid_argument("linear: expected x[in], w[out,in], b[out], got " +
                                        shape_str(xv.shape()) + ", " + shape_str(wv.shape()) +
                                        ", " + shape_str(bv.shape()));
        const int64_t out = wv.dim(0), in = wv.dim(1);
        if (xv.dim(0) != in || bv.dim(0) != out)
            throw std::invalid_argument("linear: shape mismatch x" + shape_str(xv.shape()) +
                                        " w" + shape_str(wv.shape()) + " b" + shape_str(bv.shape()));
        GraphNode n = make(OpKind::linear, {x, w, b});
        n.value = Tensor::zeros({out}, dtype_);
        dispatch_fp([&](auto tag) {
            using T = decltype(tag);
            detail::linear_fwd<T>(ptr<T>(xv), ptr<T>(wv), ptr<T>(bv), ptr<T>(n.value), out, in);
        });
        return push(std::move(n));
    }

    NodeId conv2d(NodeId x, NodeId kernel, NodeId bias, int64_t stride = 1, int64_t padding = 0) {
        const Tensor& xv = val_checked(x, "conv2d");
        check_conv_args("conv2d", xv, node(kernel).value, node(bias).value, stride, padding);
        GraphNode n = make(OpKind::conv2d, {x, kernel, bias});
        n.attrs.stride = stride;
        n.attrs.padding = padding;
        n.value = conv_forward(xv, node(kernel).value, node(bias).value, stride, padding);
        return push(std::move(n));
    }

    // Convolution that ignores every row/column outside the keep sets: the
    // kept sub-image is gathered, then convolved densely. Equals conv2d on
    // the gathered input bit for bit.
    NodeId skip_conv2d(NodeId x, NodeId kernel, NodeId bias, std::vector<int64_t> keep_rows,
                       std::vector<int64_t> keep_cols, int64_t stride = 1, int64_t padding = 0) {
        const Tensor& xv = val_checked(x, "skip_conv2d");
        if (xv.rank() != 3)
            throw std::invalid_argument("skip_conv2d: expected input [C,H,W], got " +
                                        shape_str(xv.shape()));
        detail::validate_index_set(keep_rows, xv.dim(1), "skip_conv2d", "keep_rows");
        detail::validate_index_set(keep_cols, xv.dim(2), "skip_conv2d", "keep_cols");
        Tensor gathered = gather_rows_cols(xv, keep_rows, keep_cols);
        check_conv_args("skip_conv2d", gathered, node(kernel).value, node(bias).value, stride, padding);
        GraphNode n = make(OpKind::skip_conv2d, {x, kernel, bias});
        n.attrs.stride = stride;
        n.attrs.padding = padding;
        n.attrs.keep_rows = std::move(keep_rows);
        n.attrs.keep_cols = std::move(keep_cols);
        n.value = conv_forward(gathered, node(kernel).value, node(bias).value, stride, padding);
        n.scratch = std::move(gathered);
        return push(std::move(n));
    }

    NodeId embedding(NodeId ids, NodeId table) {
        const Tensor& iv = node(ids).value;
        const Tensor& tv = val_checked(table, "embedding");
        if (iv.dtype() != DType::i64 || iv.rank() != 1)
            throw std::invalid_argument("embedding: token ids must be i64 rank-1, got " +
                                        std::string(dtype_name(iv.dtype())) + shape_str(iv.shape()));
        if (tv.rank() != 2)
            throw std::invalid_argument("embedding: table must be [vocab,embed], got " +
                                        shape_str(tv.shape()));
        GraphNode n = make(OpKind::embedding, {ids, table});
        n.value = embed_forward(iv.i64(), tv);
        return push(std::move(n));
    }

    // Embedding lookup that drops the listed sequence positions first.
    NodeId skip_embedding(NodeId ids, NodeId table, std::vector<int64_t> skip_positions) {
        const Tensor& iv = node(ids).value;
        const Tensor& tv = val_checked(table, "skip_embedding");
        if (iv.dtype() != DType::i64 || iv.rank() != 1)
            throw std::invalid_argument("skip_embedding: token ids must be i64 rank-1");
        if (tv.rank() != 2)
            throw std::invalid_argument("skip_embedding: table must be [vocab,embed]");
        if (!skip_positions.empty())
            detail::validate_index_set(skip_positions, iv.dim(0), "skip_embedding", "skip");
        if (int64_t(skip_positions.size()) >= iv.dim(0))
            throw std::invalid_argument("skip_embedding: all positions skipped");
        GraphNode n = make(OpKind::skip_embedding, {ids, table});
        n.attrs.skip_positions = std::move(skip_positions);
        n.value = embed_forward(kept_ids(iv.i64(), n.attrs.skip_positions), tv);
        return push(std::move(n));
    }

    NodeId relu(NodeId x) {
        const Tensor& xv = val_checked(x, "relu");
        GraphNode n = make(OpKind::relu, {x});
        n.value = Tensor::zeros(xv.shape(), dtype_);
        dispatch_fp([&](auto tag) {
            using T = decltype(tag);
            const T* in = ptr<T>(xv);
            T* out = ptr<T>(n.value);
            for (int64_t i = 0; i < xv.numel(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
        });
        return push(std::move(n));
    }

    NodeId maxpool2d(NodeId x, int64_t pool) { return pool2d(x, pool, true); }
    NodeId avgpool2d(NodeId x, int64_t pool) { return pool2d(x, pool, false); }

    NodeId flatten(NodeId x) {
        const Tensor& xv = val_checked(x, "flatten");
        GraphNode n = make(OpKind::flatten, {x});
        n.value = Tensor::zeros({xv.numel()}, dtype_);
        std::memcpy(n.value.raw_data(), xv.raw_data(), xv.byte_size());
        return push(std::move(n));
    }

    NodeId add(NodeId a, NodeId b) {
        const Tensor& av = val_checked(a, "add");
        const Tensor& bv = val_checked(b, "add");
        if (av.shape() != bv.shape())
            throw std::invalid_argument("add: shape mismatch " + shape_str(av.shape()) + " vs " +
                                        shape_str(bv.shape()));
        GraphNode n = make(OpKind::add, {a, b});
        n.value = Tensor::zeros(av.shape(), dtype_);
        dispatch_fp([&](auto tag) {
            using T = decltype(tag);
            const T* pa = ptr<T>(av);
            const T* pb = ptr<T>(bv);
            T* out = ptr<T>(n.value);
            for (int64_t i = 0; i < av.numel(); ++i) out[i] = pa[i] + pb[i];
        });
        return push(std::move(n));
    }

    NodeId mean_seq(NodeId x) {
        const Tensor& xv = val_checked(x, "mean_seq");
        if (xv.rank() != 2)
            throw std::invalid_argument("mean_seq: expected [len,embed], got " + shape_str(xv.shape()));
        const int64_t L = xv.dim(0), E = xv.dim(1);
        GraphNode n = make(OpKind::mean_seq, {x});
        n.value = Tensor::zeros({E}, dtype_);
        dispatch_fp([&](auto tag) {
            using T = decltype(tag);
            const T* in = ptr<T>(xv);
            T* out = ptr<T>(n.value);
            const T inv = T(1) / T(L);
            for (int64_t j = 0; j < E; ++j) {
                T acc = 0;
                for (int64_t i = 0; i < L; ++i) acc += in[i * E + j];
                out[j] = acc * inv;
            }
        });
        return push(std::move(n));
    }

    // Scalar cross-entropy of softmax(logits) against a class label.
    NodeId softmax_xent(NodeId logits, int64_t label) {
        const Tensor& zv = val_checked(logits, "softmax_xent");
        if (zv.rank() != 1)
            throw std::invalid_argument("softmax_xent: logits must be rank-1, got " +
                                        shape_str(zv.shape()));
        if (label < 0 || label >= zv.dim(0))
            throw std::out_of_range("softmax_xent: label " + std::to_string(label) +
                                    " outside [0," + std::to_string(zv.dim(0)) + ")");
        GraphNode n = make(OpKind::softmax_xent, {logits});
        n.attrs.label = label;
        n.value = Tensor::zeros({}, dtype_);
        n.scratch = Tensor::zeros(zv.shape(), dtype_);
        dispatch_fp([&](auto tag) {
            using T = decltype(tag);
            const T* z = ptr<T>(zv);
            T* p = ptr<T>(n.scratch);
            const int64_t k = zv.dim(0);
            T m = z[0];
            for (int64_t i = 1; i < k; ++i) m = z[i] > m ? z[i] : m;
            T sum = 0;
            for (int64_t i = 0; i < k; ++i) {
                p[i] = std::exp(z[i] - m);
                sum += p[i];
            }
            for (int64_t i = 0; i < k; ++i) p[i] /= sum;
            ptr<T>(n.value)[0] = std::log(sum) - (z[label] - m);
        });
        return push(std::move(n));
    }

    // Identity forward; backward contributes exactly nothing to its input.
    NodeId detach(NodeId x) {
        const Tensor& xv = val_checked(x, "detach");
        GraphNode n;
        n.kind = OpKind::detach;
        n.inputs = {x};
        n.needs_grad = false;
        n.value = xv;
        return push(std::move(n));
    }

    // Reverse accumulation from a scalar loss, fixed reverse node-id order.
    GradStore backward(NodeId loss) {
        GraphNode& ln = node_mut(loss);
        if (ln.value.numel() != 1 || !ln.value.is_floating())
            throw std::invalid_argument("backward: loss must be a floating scalar, got " +
                                        shape_str(ln.value.shape()));
        for (GraphNode& n : nodes_) n.has_grad = false;
        ensure_grad(loss).set_flat(0, 1.0);
        for (NodeId id = loss; id >= 0; --id) {
            GraphNode& n = node_mut(id);
            if (!n.has_grad || n.kind == OpKind::input || n.kind == OpKind::parameter) continue;
            backward_node(n);
        }
        GradStore store;
        for (NodeId pid : param_ids_) store.grads.emplace(pid, grad_of(pid));
        return store;
    }

    const std::vector<NodeId>& parameter_ids() const { return param_ids_; }

    // theta <- theta - lr * g for every parameter node, ascending node id.
    void sgd_step(const GradStore& grads, double lr) {
        if (!(lr > 0)) throw std::invalid_argument("sgd_step: learning rate must be > 0");
        for (NodeId pid : param_ids_) {
            auto it = grads.grads.find(pid);
            if (it == grads.grads.end())
                throw std::runtime_error("sgd_step: missing gradient for parameter node " +
                                         std::to_string(pid));
            detail::sgd_axpy(node_mut(pid).value, it->second, lr);
        }
    }

private:
    template <class F>
    void dispatch_fp(F&& f) const {
        if (dtype_ == DType::f32)
            f(float{});
        else
            f(double{});
    }

    template <class T>
    static T* ptr(const Tensor& t) {
        return const_cast<T*>(static_cast<const T*>(t.raw_data()));
    }

    GraphNode make(OpKind kind, std::vector<NodeId> inputs) {
        GraphNode n;
        n.kind = kind;
        for (NodeId i : inputs) n.needs_grad = n.needs_grad || node(i).needs_grad;
        n.inputs = std::move(inputs);
        return n;
    }

    NodeId push(GraphNode n) {
        nodes_.push_back(std::move(n));
        return NodeId(nodes_.size() - 1);
    }

    const GraphNode& node(NodeId id) const {
        if (id < 0 || size_t(id) >= nodes_.size())
            throw std::out_of_range("graph: node " + std::to_string(id));
        return nodes_[size_t(id)];
    }

    GraphNode& node_mut(NodeId id) { return const_cast<GraphNode&>(node(id)); }

    const Tensor& val_checked(NodeId id, const char* op) const {
        const Tensor& v = node(id).value;
        if (!v.is_floating())
            throw std::invalid_argument(std::string(op) + ": expected floating input, got " +
                                        dtype_name(v.dtype()));
        return v;
    }

    static void check_conv_args(const char* op, const Tensor& x, const Tensor& k, const Tensor& b,
                                int64_t stride, int64_t padding) {
        if (x.rank() != 3 || k.rank() != 4 || b.rank() != 1)
            throw std::invalid_argument(std::string(op) + ": expected x[C,H,W], k[O,C,kh,kw], b[O], got " +
                                        shape_str(x.shape()) + ", " + shape_str(k.shape()) + ", " +
                                        shape_str(b.shape()));
        if (stride < 1 || padding < 0)
            throw std::invalid_argument(std::string(op) + ": stride must be >= 1 and padding >= 0");
        if (k.dim(1) != x.dim(0))
            throw std::invalid_argument(std::string(op) + ": kernel expects " + std::to_string(k.dim(1)) +
                                        " input channels, input has " + std::to_string(x.dim(0)));
        if (b.dim(0) != k.dim(0))
            throw std::invalid_argument(std::string(op) + ": bias size " + std::to_string(b.dim(0)) +
                                        " does not match " + std::to_string(k.dim(0)) + " output channels");
        if (k.dim(2) > x.dim(1) + 2 * padding || k.dim(3) > x.dim(2) + 2 * padding)
            throw std::invalid_argument(std::string(op) + ": kernel " + std::to_string(k.dim(2)) + "x" +
                                        std::to_string(k.dim(3)) + " exceeds padded input " +
                                        std::to_string(x.dim(1) + 2 * padding) + "x" +
                                        std::to_string(x.dim(2) + 2 * padding));
    }

    Tensor conv_forward(const Tensor& x, const Tensor& k, const Tensor& b, int64_t stride,
                        int64_t padding) const {
        const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
        const int64_t O = k.dim(0), kh = k.dim(2), kw = k.dim(3);
        const int64_t Ho = detail::conv_out_dim(H, kh, stride, padding);
        const int64_t Wo = detail::conv_out_dim(W, kw, stride, padding);
        Tensor y = Tensor::zeros({O, Ho, Wo}, dtype_);
        dispatch_fp([&](auto tag) {
            using T = decltype(tag);
            detail::conv2d_fwd<T>(ptr<T>(x), ptr<T>(k), ptr<T>(b), ptr<T>(y), C, H, W, O, kh, kw,
                                  stride, padding, Ho, Wo);
        });
        return y;
    }

    Tensor gather_rows_cols(const Tensor& x, const std::vector<int64_t>& rows,
                            const std::vector<int64_t>& cols) const {
        const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
        const int64_t R = int64_t(rows.size()), S = int64_t(cols.size());
        Tensor out = Tensor::zeros({C, R, S}, dtype_);
        dispatch_fp([&](auto tag) {
            using T = decltype(tag);
            const T* in = ptr<T>(x);
            T* o = ptr<T>(out);
            for (int64_t c = 0; c < C; ++c)
                for (int64_t r = 0; r < R; ++r)
                    for (int64_t s = 0; s < S; ++s)
                        o[(c * R + r) * S + s] = in[(c * H + rows[size_t(r)]) * W + cols[size_t(s)]];
        });
        return out;
    }

    static std::vector<int64_t> kept_ids(const std::vector<int64_t>& ids,
                                         const std::vector<int64_t>& skip) {
        std::vector<int64_t> out;
        out.reserve(ids.size() - skip.size());
        size_t si = 0;
        for (int64_t i = 0; i < int64_t(ids.size()); ++i) {
            if (si < skip.size() && skip[si] == i) {
                ++si;
                continue;
            }
            out.push_back(ids[size_t(i)]);
        }
        return out;
    }

    Tensor embed_forward(const std::vector<int64_t>& ids, const Tensor& table) const {
        const int64_t V = table.dim(0), E = table.dim(1);
        const int64_t L = int64_t(ids.size());
        Tensor out = Tensor::zeros({L, E}, dtype_);
        dispatch_fp([&](auto tag) {
            using T = decltype(tag);
            const T* tb = ptr<T>(table);
            T* o = ptr<T>(out);
            for (int64_t i = 0; i < L; ++i) {
                const int64_t id = ids[size_t(i)];
                if (id < 0 || id >= V)
                    throw std::out_of_range("embedding: token id " + std::to_string(id) +
                                            " outside vocabulary of " + std::to_string(V));
                std::memcpy(o + i * E, tb + id * E, size_t(E) * sizeof(T));
            }
        });
        return out;
    }

    NodeId pool2d(NodeId x, int64_t pool, bool is_max) {
        const char* op = is_max ? "maxpool2d" : "avgpool2d";
        const Tensor& xv = val_checked(x, op);
        if (xv.rank() != 3)
            throw std::invalid_argument(std::string(op) + ": expected [C,H,W], got " +
                                        shape_str(xv.shape()));
        if (pool < 1 || xv.dim(1) < pool || xv.dim(2) < pool)
            throw std::invalid_argument(std::string(op) + ": window " + std::to_string(pool) +
                                        " too large for input " + shape_str(xv.shape()));
        const int64_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
        const int64_t Ho = H / pool, Wo = W / pool;
        GraphNode n = make(is_max ? OpKind::maxpool2d : OpKind::avgpool2d, {x});
        n.attrs.pool = pool;
        n.value = Tensor::zeros({C, Ho, Wo}, dtype_);
        if (is_max) n.iarg.assign(size_t(C * Ho * Wo), 0);
        dispatch_fp([&](auto tag) {
            using T = decltype(tag);
            const T* in = ptr<T>(xv);
            T* out = ptr<T>(n.value);
            const T inv = T(1) / T(pool * pool);
            for (int64_t c = 0; c < C; ++c) {
                for (int64_t oy = 0; oy < Ho; ++oy) {
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                        const int64_t oidx = (c * Ho + oy) * Wo + ox;
                        if (is_max) {
                            int64_t best = (c * H + oy * pool) * W + ox * pool;
                            T bv = in[best];
                            for (int64_t py = 0; py < pool; ++py)
                                for (int64_t px = 0; px < pool; ++px) {
                                    const int64_t idx = (c * H + oy * pool + py) * W + ox * pool + px;
                                    if (in[idx] > bv) {
                                        bv = in[idx];
                                        best = idx;
                                    }
                                }
                            out[oidx] = bv;
                            n.iarg[size_t(oidx)] = best;
                        } else {
                            T acc = 0;
                            for (int64_t py = 0; py < pool; ++py)
                                for (int64_t px = 0; px < pool; ++px)
                                    acc += in[(c * H + oy * pool + py) * W + ox * pool + px];
                            out[oidx] = acc * inv;
                        }
                    }
                }
            }
        });
        return push(std::move(n));
    }

    Tensor& ensure_grad(NodeId id) {
        GraphNode& n = node_mut(id);
        if (!n.has_grad) {
            n.grad = Tensor::zeros(n.value.shape(), n.value.dtype());
            n.has_grad = true;
        }
        return n.grad;
    }

    bool wants_grad(NodeId id) const { return node(id).needs_grad; }

    void backward_node(GraphNode& n) {
        switch (n.kind) {
            case OpKind::detach:
                return;
            case OpKind::linear: {
                const Tensor& xv = node(n.inputs[0]).value;
                const Tensor& wv = node(n.inputs[1]).value;
                const int64_t out = wv.dim(0), in = wv.dim(1);
                dispatch_fp([&](auto tag) {
                    using T = decltype(tag);
                    detail::linear_bwd<T>(
                        ptr<T>(xv), ptr<T>(wv), ptr<T>(n.grad),
                        wants_grad(n.inputs[0]) ? ptr<T>(ensure_grad(n.inputs[0])) : nullptr,
                        wants_grad(n.inputs[1]) ? ptr<T>(ensure_grad(n.inputs[1])) : nullptr,
                        wants_grad(n.inputs[2]) ? ptr<T>(ensure_grad(n.inputs[2])) : nullptr, out, in);
                });
                return;
            }
            case OpKind::conv2d: {
                conv_backward(n, node(n.inputs[0]).value,
                              wants_grad(n.inputs[0]) ? &ensure_grad(n.inputs[0]) : nullptr);
                return;
            }
            case OpKind::skip_conv2d: {
                // Dense backward over the gathered buffer, then scatter the
                // input gradient to kept positions. Skipped cells stay zero.
                Tensor* dx_full = wants_grad(n.inputs[0]) ? &ensure_grad(n.inputs[0]) : nullptr;
                Tensor dgather;
                if (dx_full) dgather = Tensor::zeros(n.scratch.shape(), n.scratch.dtype());
                conv_backward(n, n.scratch, dx_full ? &dgather : nullptr);
                if (dx_full) {
                    const auto& rows = n.attrs.keep_rows;
                    const auto& cols = n.attrs.keep_cols;
                    const int64_t C = dx_full->dim(0), H = dx_full->dim(1), W = dx_full->dim(2);
                    const int64_t R = int64_t(rows.size()), S = int64_t(cols.size());
                    dispatch_fp([&](auto tag) {
                        using T = decltype(tag);
                        const T* g = ptr<T>(dgather);
                        T* o = ptr<T>(*dx_full);
                        for (int64_t c = 0; c < C; ++c)
                            for (int64_t r = 0; r < R; ++r)
                                for (int64_t s = 0; s < S; ++s)
                                    o[(c * H + rows[size_t(r)]) * W + cols[size_t(s)]] +=
                                        g[(c * R + r) * S + s];
                    });
                }
                return;
            }
            case OpKind::embedding:
            case OpKind::skip_embedding: {
                if (!wants_grad(n.inputs[1])) return;
                const Tensor& iv = node(n.inputs[0]).value;
                std::vector<int64_t> ids = n.kind == OpKind::embedding
                                               ? iv.i64()
                                               : kept_ids(iv.i64(), n.attrs.skip_positions);
                Tensor& dt = ensure_grad(n.inputs[1]);
                const int64_t E = dt.dim(1);
                dispatch_fp([&](auto tag) {
                    using T = decltype(tag);
                    const T* g = ptr<T>(n.grad);
                    T* o = ptr<T>(dt);
                    for (int64_t i = 0; i < int64_t(ids.size()); ++i)
                        for (int64_t j = 0; j < E; ++j) o[ids[size_t(i)] * E + j] += g[i * E + j];
                });
                return;
            }
            case OpKind::relu: {
                if (!wants_grad(n.inputs[0])) return;
                const Tensor& xv = node(n.inputs[0]).value;
                Tensor& dx = ensure_grad(n.inputs[0]);
                dispatch_fp([&](auto tag) {
                    using T = decltype(tag);
                    const T* in = ptr<T>(xv);
                    const T* g = ptr<T>(n.grad);
                    T* o = ptr<T>(dx);
                    for (int64_t i = 0; i < xv.numel(); ++i)
                        if (in[i] > T(0)) o[i] += g[i];
                });
                return;
            }
            case OpKind::maxpool2d: {
                if (!wants_grad(n.inputs[0])) return;
                Tensor& dx = ensure_grad(n.inputs[0]);
                dispatch_fp([&](auto tag) {
                    using T = decltype(tag);
                    const T* g = ptr<T>(n.grad);
                    T* o = ptr<T>(dx);
                    for (int64_t i = 0; i < n.value.numel(); ++i) o[n.iarg[size_t(i)]] += g[i];
                });
                return;
            }
            case OpKind::avgpool2d: {
                if (!wants_grad(n.inputs[0])) return;
                const Tensor& xv = node(n.inputs[0]).value;
                Tensor& dx = ensure_grad(n.inputs[0]);
                const int64_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
                const int64_t pool = n.attrs.pool, Ho = H / pool, Wo = W / pool;
                dispatch_fp([&](auto tag) {
                    using T = decltype(tag);
                    const T* g = ptr<T>(n.grad);
                    T* o = ptr<T>(dx);
                    const T inv = T(1) / T(pool * pool);
                    for (int64_t c = 0; c < C; ++c)
                        for (int64_t oy = 0; oy < Ho; ++oy)
                            for (int64_t ox = 0; ox < Wo; ++ox) {
                                const T gv = g[(c * Ho + oy) * Wo + ox] * inv;
                                for (int64_t py = 0; py < pool; ++py)
                                    for (int64_t px = 0; px < pool; ++px)
                                        o[(c * H + oy * pool + py) * W + ox * pool + px] += gv;
                            }
                });
                return;
            }
            case OpKind::flatten: {
                if (!wants_grad(n.inputs[0])) return;
                Tensor& dx = ensure_grad(n.inputs[0]);
                dispatch_fp([&](auto tag) {
                    using T = decltype(tag);
                    const T* g = ptr<T>(n.grad);
                    T* o = ptr<T>(dx);
                    for (int64_t i = 0; i < n.value.numel(); ++i) o[i] += g[i];
                });
                return;
            }
            case OpKind::add: {
                for (int which = 0; which < 2; ++which) {
                    if (!wants_grad(n.inputs[size_t(which)])) continue;
                    Tensor& dx = ensure_grad(n.inputs[size_t(which)]);
                    dispatch_fp([&](auto tag) {
                        using T = decltype(tag);
                        const T* g = ptr<T>(n.grad);
                        T* o = ptr<T>(dx);
                        for (int64_t i = 0; i < n.value.numel(); ++i) o[i] += g[i];
                    });
                }
                return;
            }
            case OpKind::mean_seq: {
                if (!wants_grad(n.inputs[0])) return;
                const Tensor& xv = node(n.inputs[0]).value;
                Tensor& dx = ensure_grad(n.inputs[0]);
                const int64_t L = xv.dim(0), E = xv.dim(1);
                dispatch_fp([&](auto tag) {
                    using T = decltype(tag);
                    const T* g = ptr<T>(n.grad);
                    T* o = ptr<T>(dx);
                    const T inv = T(1) / T(L);
                    for (int64_t i = 0; i < L; ++i)
                        for (int64_t j = 0; j < E; ++j) o[i * E + j] += g[j] * inv;
                });
                return;
            }
            case OpKind::softmax_xent: {
                if (!wants_grad(n.inputs[0])) return;
                Tensor& dz = ensure_grad(n.inputs[0]);
                const int64_t k = dz.dim(0);
                dispatch_fp([&](auto tag) {
                    using T = decltype(tag);
                    const T g = ptr<T>(n.grad)[0];
                    const T* p = ptr<T>(n.scratch);
                    T* o = ptr<T>(dz);
                    for (int64_t i = 0; i < k; ++i)
                        o[i] += g * (p[i] - (i == n.attrs.label ? T(1) : T(0)));
                });
                return;
            }
            case OpKind::input:
            case OpKind::parameter:
                return;
        }
    }

    void conv_backward(GraphNode& n, const Tensor& x, Tensor* dx) {
        const Tensor& kv = node(n.inputs[1]).value;
        Tensor* dk = wants_grad(n.inputs[1]) ? &ensure_grad(n.inputs[1]) : nullptr;
        Tensor* db = wants_grad(n.inputs[2]) ? &ensure_grad(n.inputs[2]) : nullptr;
        const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
        const int64_t O = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
        const int64_t Ho = n.value.dim(1), Wo = n.value.dim(2);
        dispatch_fp([&](auto tag) {
            using T = decltype(tag);
            detail::conv2d_bwd<T>(ptr<T>(x), ptr<T>(kv), ptr<T>(n.grad), dx ? ptr<T>(*dx) : nullptr,
                                  dk ? ptr<T>(*dk) : nullptr, db ? ptr<T>(*db) : nullptr, C, H, W, O,
                                  kh, kw, n.attrs.stride, n.attrs.padding, Ho, Wo);
        });
    }

    DType dtype_;
    std::vector<GraphNode> nodes_;
    std::vector<NodeId> param_ids_;
};

inline void sgd_step(Graph& g, const GradStore& grads, double lr) { g.sgd_step(grads, lr); }

}  // namespace amalgam
