#pragma once

#include <map>
#include <string>
#include <vector>

#include "amalgam/autodiff.hpp"
#include "amalgam/model_ir.hpp"

namespace amalgam {

// Binds a ModelGraph + ParamStore to the autodiff engine. The layout is
// analyzed once; forward() builds a fresh eager graph per sample.
//
// Execution rules:
//   - a layer with no incoming edges consumes the model input;
//   - multiple incoming edges are summed in edge order;
//   - an edge's value passes through detach when grad_stop is set, then
//     through its adapter layer if one is named.
class Executor {
public:
    explicit Executor(const ModelGraph& g) : graph_(&g), layout_(analyze_model(g)) {}

    struct Run {
        Graph engine;
        std::vector<NodeId> head_nodes;
        // parameter binding in store order: (layer, name) -> engine node
        std::map<std::pair<std::string, std::string>, NodeId> param_nodes;
    };

    const GraphLayout& layout() const { return layout_; }
    const ModelGraph& model() const { return *graph_; }

    Run forward(const ParamStore& params, const Tensor& sample, DType dtype = DType::f32) const {
        Run run{Graph(dtype), {}, {}};
        Graph& eng = run.engine;

        if (sample.shape() != graph_->input.shape)
            throw std::invalid_argument("execute: sample shape " + shape_str(sample.shape()) +
                                        " does not match model input " +
                                        shape_str(graph_->input.shape));
        Tensor in = sample;
        if (in.is_floating() && in.dtype() != dtype) in = in.to_dtype(dtype);
        const NodeId input_node = eng.input(std::move(in));

        auto param_node = [&](const std::string& layer, const std::string& name) {
            auto key = std::make_pair(layer, name);
            auto it = run.param_nodes.find(key);
            if (it != run.param_nodes.end()) return it->second;
            Tensor t = params.at(layer, name);
            if (t.dtype() != dtype) t = t.to_dtype(dtype);
            NodeId id = eng.parameter(std::move(t));
            run.param_nodes.emplace(key, id);
            return id;
        };

        std::map<std::string, NodeId> out_node;
        auto apply_layer = [&](const LayerSpec& l, NodeId x) -> NodeId {
            if (l.kind == "conv2d")
                return eng.conv2d(x, param_node(l.id, "kernel"), param_node(l.id, "bias"),
                                  l.hyper_int("stride"), l.hyper_int("padding"));
            if (l.kind == "skip_conv2d")
                return eng.skip_conv2d(x, param_node(l.id, "kernel"), param_node(l.id, "bias"),
                                       l.hyper_list("keep_rows"), l.hyper_list("keep_cols"),
                                       l.hyper_int("stride"), l.hyper_int("padding"));
            if (l.kind == "linear")
                return eng.linear(x, param_node(l.id, "weight"), param_node(l.id, "bias"));
            if (l.kind == "embedding") return eng.embedding(x, param_node(l.id, "table"));
            if (l.kind == "skip_embedding")
                return eng.skip_embedding(x, param_node(l.id, "table"), l.hyper_list("skip_positions"));
            if (l.kind == "relu") return eng.relu(x);
            if (l.kind == "maxpool2d") return eng.maxpool2d(x, l.hyper_int("pool"));
            if (l.kind == "avgpool2d") return eng.avgpool2d(x, l.hyper_int("pool"));
            if (l.kind == "flatten") return eng.flatten(x);
            if (l.kind == "mean_seq") return eng.mean_seq(x);
            if (l.kind == "add") return x;  // fan-in already summed
            throw std::runtime_error("execute: unknown layer kind '" + l.kind + "'");
        };

        for (const std::string& id : layout_.order) {
            const LayerSpec& l = graph_->layer(id);
            NodeId x;
            auto it = layout_.in_edges.find(id);
            if (it == layout_.in_edges.end()) {
                x = input_node;
            } else {
                bool first = true;
                x = -1;
                for (size_t ei : it->second) {
                    const EdgeSpec& e = graph_->edges[ei];
                    NodeId v = out_node.at(e.src);
                    if (e.grad_stop) v = eng.detach(v);
                    if (!e.adapter.empty()) v = apply_layer(graph_->layer(e.adapter), v);
                    x = first ? v : eng.add(x, v);
                    first = false;
                }
            }
            out_node[id] = apply_layer(l, x);
        }

        run.head_nodes.reserve(graph_->heads.size());
        for (const std::string& h : graph_->heads) run.head_nodes.push_back(out_node.at(h));
        return run;
    }

    // Sum of per-head cross-entropy losses against one label.
    static NodeId total_loss(Run& run, int64_t label) {
        NodeId loss = -1;
        for (NodeId head : run.head_nodes) {
            NodeId ce = run.engine.softmax_xent(head, label);
            loss = loss < 0 ? ce : run.engine.add(loss, ce);
        }
        return loss;
    }

private:
    const ModelGraph* graph_;
    GraphLayout layout_;
};

}  // namespace amalgam
