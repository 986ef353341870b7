#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "amalgam/amlg_io.hpp"
#include "amalgam/rng.hpp"
#include "amalgam/tensor.hpp"

namespace amalgam {

constexpr const char* kModelFormatVersion = "amalgam-ir/1";

using HyperValue = std::variant<int64_t, std::vector<int64_t>>;

struct LayerSpec {
    std::string id;
    std::string kind;
    std::map<std::string, HyperValue> hyper;
    // (name, dims) in canonical per-kind order: kernel/weight/table first,
    // bias second.
    std::vector<std::pair<std::string, std::vector<int64_t>>> param_shapes;

    int64_t hyper_int(const std::string& key) const {
        auto it = hyper.find(key);
        if (it == hyper.end() || !std::holds_alternative<int64_t>(it->second))
            throw std::runtime_error("layer '" + id + "': missing integer hyperparameter '" + key + "'");
        return std::get<int64_t>(it->second);
    }

    std::vector<int64_t> hyper_list(const std::string& key) const {
        auto it = hyper.find(key);
        if (it == hyper.end() || !std::holds_alternative<std::vector<int64_t>>(it->second))
            throw std::runtime_error("layer '" + id + "': missing list hyperparameter '" + key + "'");
        return std::get<std::vector<int64_t>>(it->second);
    }

    bool operator==(const LayerSpec& o) const {
        return id == o.id && kind == o.kind && hyper == o.hyper && param_shapes == o.param_shapes;
    }
};

struct EdgeSpec {
    std::string src;
    std::string dst;
    bool grad_stop = false;
    std::string adapter;  // optional projection layer id, empty if none

    bool operator==(const EdgeSpec& o) const {
        return src == o.src && dst == o.dst && grad_stop == o.grad_stop && adapter == o.adapter;
    }
};

struct InputSpec {
    std::string modality;  // "image" or "text"
    std::vector<int64_t> shape;

    bool operator==(const InputSpec& o) const = default;
};

struct ModelGraph {
    std::string version = kModelFormatVersion;
    std::vector<LayerSpec> layers;
    std::vector<EdgeSpec> edges;
    std::vector<std::string> heads;
    InputSpec input;

    const LayerSpec* find_layer(const std::string& id) const {
        for (const auto& l : layers)
            if (l.id == id) return &l;
        return nullptr;
    }

    LayerSpec& layer(const std::string& id) {
        for (auto& l : layers)
            if (l.id == id) return l;
        throw std::runtime_error("model: unknown layer '" + id + "'");
    }

    const LayerSpec& layer(const std::string& id) const {
        const LayerSpec* l = find_layer(id);
        if (!l) throw std::runtime_error("model: unknown layer '" + id + "'");
        return *l;
    }

    bool operator==(const ModelGraph& o) const {
        return version == o.version && layers == o.layers && edges == o.edges && heads == o.heads &&
               input == o.input;
    }
};

struct ParamStore {
    std::map<std::pair<std::string, std::string>, Tensor> values;

    Tensor& at(const std::string& layer, const std::string& name) {
        auto it = values.find({layer, name});
        if (it == values.end())
            throw std::runtime_error("params: missing tensor '" + layer + "/" + name + "'");
        return it->second;
    }

    const Tensor& at(const std::string& layer, const std::string& name) const {
        return const_cast<ParamStore*>(this)->at(layer, name);
    }

    bool same_bits(const ParamStore& o) const {
        if (values.size() != o.values.size()) return false;
        auto a = values.begin();
        auto b = o.values.begin();
        for (; a != values.end(); ++a, ++b)
            if (a->first != b->first || !a->second.same_bits(b->second)) return false;
        return true;
    }
};

// ---------------------------------------------------------------------------
// Layer construction helpers

inline LayerSpec conv_layer(std::string id, int64_t in_ch, int64_t out_ch, int64_t kernel,
                            int64_t stride = 1, int64_t padding = 0) {
    LayerSpec l;
    l.id = std::move(id);
    l.kind = "conv2d";
    l.hyper = {{"in_channels", in_ch},   {"out_channels", out_ch}, {"kernel_h", kernel},
               {"kernel_w", kernel},     {"stride", stride},       {"padding", padding}};
    l.param_shapes = {{"kernel", {out_ch, in_ch, kernel, kernel}}, {"bias", {out_ch}}};
    return l;
}

inline LayerSpec linear_layer(std::string id, int64_t in, int64_t out) {
    LayerSpec l;
    l.id = std::move(id);
    l.kind = "linear";
    l.hyper = {{"in_features", in}, {"out_features", out}};
    l.param_shapes = {{"weight", {out, in}}, {"bias", {out}}};
    return l;
}

inline LayerSpec embedding_layer(std::string id, int64_t vocab, int64_t embed) {
    LayerSpec l;
    l.id = std::move(id);
    l.kind = "embedding";
    l.hyper = {{"vocab", vocab}, {"embed_dim", embed}};
    l.param_shapes = {{"table", {vocab, embed}}};
    return l;
}

inline LayerSpec unary_layer(std::string id, std::string kind) {
    LayerSpec l;
    l.id = std::move(id);
    l.kind = std::move(kind);
    return l;
}

inline LayerSpec pool_layer(std::string id, std::string kind, int64_t pool) {
    LayerSpec l = unary_layer(std::move(id), std::move(kind));
    l.hyper = {{"pool", pool}};
    return l;
}

// Rewrites a conv2d spec into its skip variant (or back), keeping parameters.
inline void to_skip_conv(LayerSpec& l, std::vector<int64_t> keep_rows,
                         std::vector<int64_t> keep_cols) {
    l.kind = "skip_conv2d";
    l.hyper["keep_rows"] = std::move(keep_rows);
    l.hyper["keep_cols"] = std::move(keep_cols);
}

inline void to_skip_embedding(LayerSpec& l, std::vector<int64_t> skip_positions) {
    l.kind = "skip_embedding";
    l.hyper["skip_positions"] = std::move(skip_positions);
}

inline void to_plain_input_layer(LayerSpec& l) {
    if (l.kind == "skip_conv2d") {
        l.kind = "conv2d";
        l.hyper.erase("keep_rows");
        l.hyper.erase("keep_cols");
    } else if (l.kind == "skip_embedding") {
        l.kind = "embedding";
        l.hyper.erase("skip_positions");
    }
}

// ---------------------------------------------------------------------------
// Validation and shape inference

inline std::vector<std::pair<std::string, std::vector<int64_t>>> expected_param_shapes(
    const LayerSpec& l) {
    if (l.kind == "conv2d" || l.kind == "skip_conv2d") {
        return {{"kernel",
                 {l.hyper_int("out_channels"), l.hyper_int("in_channels"), l.hyper_int("kernel_h"),
                  l.hyper_int("kernel_w")}},
                {"bias", {l.hyper_int("out_channels")}}};
    }
    if (l.kind == "linear")
        return {{"weight", {l.hyper_int("out_features"), l.hyper_int("in_features")}},
                {"bias", {l.hyper_int("out_features")}}};
    if (l.kind == "embedding" || l.kind == "skip_embedding")
        return {{"table", {l.hyper_int("vocab"), l.hyper_int("embed_dim")}}};
    return {};
}

struct GraphLayout {
    std::vector<std::string> order;                          // topo order, adapters excluded
    std::map<std::string, std::vector<size_t>> in_edges;     // dst -> edge indices, file order
    std::set<std::string> adapters;
    std::map<std::string, std::vector<int64_t>> out_shape;   // layer -> output shape (adapters too)
    std::map<std::string, std::vector<int64_t>> in_shape;    // layer -> input shape
};

namespace detail {

inline std::vector<int64_t> layer_out_shape(const LayerSpec& l, const std::vector<int64_t>& in) {
    auto fail = [&](const std::string& why) {
        throw std::runtime_error("layer '" + l.id + "' (" + l.kind + "): " + why + ", input " +
                                 shape_str(in));
    };
    if (l.kind == "conv2d" || l.kind == "skip_conv2d") {
        if (in.size() != 3) fail("expects [C,H,W]");
        int64_t h = in[1], w = in[2];
        if (l.kind == "skip_conv2d") {
            h = int64_t(l.hyper_list("keep_rows").size());
            w = int64_t(l.hyper_list("keep_cols").size());
        }
        if (in[0] != l.hyper_int("in_channels")) fail("channel mismatch");
        const int64_t s = l.hyper_int("stride"), p = l.hyper_int("padding");
        const int64_t ho = (h + 2 * p - l.hyper_int("kernel_h")) / s + 1;
        const int64_t wo = (w + 2 * p - l.hyper_int("kernel_w")) / s + 1;
        if (ho < 1 || wo < 1) fail("kernel larger than (kept) input");
        return {l.hyper_int("out_channels"), ho, wo};
    }
    if (l.kind == "linear") {
        if (in.size() != 1 || in[0] != l.hyper_int("in_features")) fail("expects [in_features]");
        return {l.hyper_int("out_features")};
    }
    if (l.kind == "embedding" || l.kind == "skip_embedding") {
        if (in.size() != 1) fail("expects [seq_len] token ids");
        int64_t len = in[0];
        if (l.kind == "skip_embedding") len -= int64_t(l.hyper_list("skip_positions").size());
        if (len < 1) fail("all positions skipped");
        return {len, l.hyper_int("embed_dim")};
    }
    if (l.kind == "relu" || l.kind == "add") return in;
    if (l.kind == "maxpool2d" || l.kind == "avgpool2d") {
        if (in.size() != 3) fail("expects [C,H,W]");
        const int64_t p = l.hyper_int("pool");
        if (p < 1 || in[1] < p || in[2] < p) fail("pool window too large");
        return {in[0], in[1] / p, in[2] / p};
    }
    if (l.kind == "flatten") {
        int64_t n = 1;
        for (int64_t d : in) n *= d;
        return {n};
    }
    if (l.kind == "mean_seq") {
        if (in.size() != 2) fail("expects [seq_len, embed]");
        return {in[1]};
    }
    fail("unknown layer kind");
    return {};
}

}  // namespace detail

// Validates structure and computes the execution layout with shapes.
// Throws with the offending layer/edge on any violation.
inline GraphLayout analyze_model(const ModelGraph& g) {
    if (g.version != kModelFormatVersion)
        throw std::runtime_error("model: version '" + g.version + "' is not '" +
                                 std::string(kModelFormatVersion) + "'");
    if (g.input.modality != "image" && g.input.modality != "text")
        throw std::runtime_error("model: unknown modality '" + g.input.modality + "'");
    if (g.heads.empty()) throw std::runtime_error("model: no output heads");

    GraphLayout lay;
    std::set<std::string> ids;
    for (const auto& l : g.layers) {
        if (!ids.insert(l.id).second)
            throw std::runtime_error("model: duplicate layer id '" + l.id + "'");
        if (l.param_shapes != expected_param_shapes(l))
            throw std::runtime_error("model: layer '" + l.id +
                                     "' parameter shapes do not match its hyperparameters");
        const bool skip_kind = l.kind == "skip_conv2d" || l.kind == "skip_embedding";
        const bool has_sets = l.hyper.count("keep_rows") || l.hyper.count("keep_cols") ||
                              l.hyper.count("skip_positions");
        if (skip_kind != has_sets)
            throw std::runtime_error("model: layer '" + l.id +
                                     "' keep/skip sets must be present exactly for skip kinds");
    }
    for (size_t i = 0; i < g.edges.size(); ++i) {
        const EdgeSpec& e = g.edges[i];
        for (const std::string* id : {&e.src, &e.dst})
            if (!ids.count(*id))
                throw std::runtime_error("model: edge " + std::to_string(i) +
                                         " references unknown layer '" + *id + "'");
        if (!e.adapter.empty()) {
            if (!ids.count(e.adapter))
                throw std::runtime_error("model: edge " + std::to_string(i) +
                                         " references unknown adapter '" + e.adapter + "'");
            lay.adapters.insert(e.adapter);
        }
        lay.in_edges[e.dst].push_back(i);
    }
    for (const std::string& h : g.heads) {
        if (!ids.count(h)) throw std::runtime_error("model: head references unknown layer '" + h + "'");
        if (lay.adapters.count(h)) throw std::runtime_error("model: head '" + h + "' is an adapter");
    }
    for (const auto& e : g.edges)
        if (lay.adapters.count(e.src) || lay.adapters.count(e.dst))
            throw std::runtime_error("model: adapter '" +
                                     (lay.adapters.count(e.src) ? e.src : e.dst) +
                                     "' cannot have regular edges");

    // Kahn's algorithm over regular layers, stable in declaration order.
    std::map<std::string, int> pending;
    std::vector<std::vector<std::string>> successors_of(g.layers.size());
    std::map<std::string, size_t> index_of;
    for (size_t i = 0; i < g.layers.size(); ++i) index_of[g.layers[i].id] = i;
    for (const auto& l : g.layers)
        if (!lay.adapters.count(l.id)) pending[l.id] = 0;
    for (const auto& e : g.edges) {
        pending[e.dst] += 1;
        successors_of[index_of[e.src]].push_back(e.dst);
    }
    std::vector<std::string> ready;
    for (const auto& l : g.layers)
        if (!lay.adapters.count(l.id) && pending[l.id] == 0) ready.push_back(l.id);
    while (!ready.empty()) {
        std::string id = ready.front();
        ready.erase(ready.begin());
        lay.order.push_back(id);
        for (const std::string& nxt : successors_of[index_of[id]])
            if (--pending[nxt] == 0) ready.push_back(nxt);
    }
    if (lay.order.size() != g.layers.size() - lay.adapters.size())
        throw std::runtime_error("model: graph contains a cycle");

    // Shape inference along the layout.
    for (const std::string& id : lay.order) {
        const LayerSpec& l = g.layer(id);
        std::vector<int64_t> in;
        auto it = lay.in_edges.find(id);
        if (it == lay.in_edges.end()) {
            in = g.input.shape;
        } else {
            for (size_t ei : it->second) {
                const EdgeSpec& e = g.edges[ei];
                std::vector<int64_t> contrib = lay.out_shape.at(e.src);
                if (!e.adapter.empty()) {
                    const LayerSpec& ad = g.layer(e.adapter);
                    lay.in_shape[ad.id] = contrib;
                    contrib = detail::layer_out_shape(ad, contrib);
                    lay.out_shape[ad.id] = contrib;
                }
                if (in.empty())
                    in = contrib;
                else if (in != contrib)
                    throw std::runtime_error("model: layer '" + id + "' receives mismatched inputs " +
                                             shape_str(in) + " vs " + shape_str(contrib));
            }
        }
        lay.in_shape[id] = in;
        lay.out_shape[id] = detail::layer_out_shape(l, in);
    }

    const std::vector<int64_t>& head0 = lay.out_shape.at(g.heads[0]);
    for (const std::string& h : g.heads)
        if (lay.out_shape.at(h) != head0)
            throw std::runtime_error("model: head '" + h + "' shape " + shape_str(lay.out_shape.at(h)) +
                                     " differs from head '" + g.heads[0] + "' " + shape_str(head0));
    return lay;
}

inline void validate_model(const ModelGraph& g) { analyze_model(g); }

// ---------------------------------------------------------------------------
// Parameter counting and initialization

inline int64_t param_count(const ModelGraph& g) {
    int64_t total = 0;
    for (const auto& l : g.layers)
        for (const auto& [name, dims] : l.param_shapes) {
            int64_t n = 1;
            for (int64_t d : dims) n *= d;
            total += n;
        }
    return total;
}

inline int64_t fan_in_of(const LayerSpec& l, const std::string& param,
                         const std::vector<int64_t>& dims) {
    (void)param;
    if (l.kind == "conv2d" || l.kind == "skip_conv2d") return dims[1] * dims[2] * dims[3];
    if (l.kind == "linear") return dims[1];
    if (l.kind == "embedding" || l.kind == "skip_embedding") return dims[1];
    return dims.empty() ? 1 : dims.back();
}

// Seeded initialization. Every layer id gets its own RNG stream so adding
// layers never perturbs the draws of existing ones. Weights are
// uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)); biases zero.
inline ParamStore init_params(const ModelGraph& g, uint64_t seed) {
    ParamStore store;
    for (const auto& l : g.layers) {
        Rng rng(mix_seed(seed, hash_name(l.id)));
        for (const auto& [name, dims] : l.param_shapes) {
            Tensor t = Tensor::zeros(dims, DType::f32);
            if (name != "bias") {
                const double bound = std::sqrt(1.0 / double(fan_in_of(l, name, dims)));
                float* p = t.f32().data();
                for (int64_t i = 0; i < t.numel(); ++i) p[i] = float(rng.uniform(-bound, bound));
            }
            store.values.emplace(std::make_pair(l.id, name), std::move(t));
        }
    }
    return store;
}

// ---------------------------------------------------------------------------
// Serialization: structure as canonical JSON, parameters as an AMLG sidecar
// keyed "layerid/paramname".

inline std::string params_path_for(const std::string& model_path) {
    const std::string suffix = ".json";
    if (model_path.size() > suffix.size() &&
        model_path.compare(model_path.size() - suffix.size(), suffix.size(), suffix) == 0)
        return model_path.substr(0, model_path.size() - suffix.size()) + ".params.amlg";
    return model_path + ".params.amlg";
}

namespace detail {

inline nlohmann::json hyper_to_json(const std::map<std::string, HyperValue>& hyper) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : hyper) {
        if (std::holds_alternative<int64_t>(v))
            j[k] = std::get<int64_t>(v);
        else
            j[k] = std::get<std::vector<int64_t>>(v);
    }
    return j;
}

inline std::map<std::string, HyperValue> hyper_from_json(const nlohmann::json& j) {
    std::map<std::string, HyperValue> hyper;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it->is_array())
            hyper[it.key()] = it->get<std::vector<int64_t>>();
        else
            hyper[it.key()] = it->get<int64_t>();
    }
    return hyper;
}

inline uint64_t bytes_checksum(const std::string& bytes) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[size_t(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return s;
}

}  // namespace detail

inline std::string params_to_bytes(const ModelGraph& g, const ParamStore& params) {
    std::vector<AmlgRecord> records;
    for (const auto& [key, t] : params.values) records.push_back({key.first + "/" + key.second, t});
    std::sort(records.begin(), records.end(),
              [](const AmlgRecord& a, const AmlgRecord& b) { return a.name < b.name; });
    // Coverage check: exactly the graph's declared parameters.
    size_t declared = 0;
    for (const auto& l : g.layers) {
        for (const auto& [name, dims] : l.param_shapes) {
            ++declared;
            auto it = params.values.find({l.id, name});
            if (it == params.values.end())
                throw std::runtime_error("serialize: missing parameter '" + l.id + "/" + name + "'");
            if (it->second.shape() != dims)
                throw std::runtime_error("serialize: parameter '" + l.id + "/" + name + "' has shape " +
                                         shape_str(it->second.shape()) + ", expected " + shape_str(dims));
        }
    }
    if (declared != params.values.size())
        throw std::runtime_error("serialize: parameter store has entries not declared by the graph");
    return amlg_to_bytes(records);
}

inline std::string model_to_json(const ModelGraph& g, const std::string& params_checksum) {
    nlohmann::json j;
    j["version"] = g.version;
    j["input"] = {{"modality", g.input.modality}, {"shape", g.input.shape}};
    j["heads"] = g.heads;
    j["params_checksum"] = params_checksum;
    j["layers"] = nlohmann::json::array();
    for (const auto& l : g.layers) {
        nlohmann::json lj;
        lj["id"] = l.id;
        lj["kind"] = l.kind;
        lj["hyper"] = detail::hyper_to_json(l.hyper);
        nlohmann::json pj = nlohmann::json::object();
        for (const auto& [name, dims] : l.param_shapes) pj[name] = dims;
        lj["params"] = pj;
        j["layers"].push_back(lj);
    }
    j["edges"] = nlohmann::json::array();
    for (const auto& e : g.edges) {
        nlohmann::json ej;
        ej["src"] = e.src;
        ej["dst"] = e.dst;
        ej["grad_stop"] = e.grad_stop;
        if (!e.adapter.empty()) ej["adapter"] = e.adapter;
        j["edges"].push_back(ej);
    }
    return j.dump(2) + "\n";
}

inline void serialize_model(const ModelGraph& g, const ParamStore& params,
                            const std::string& path) {
    validate_model(g);
    const std::string param_bytes = params_to_bytes(g, params);
    const std::string checksum = detail::hex64(detail::bytes_checksum(param_bytes));
    const std::string json_text = model_to_json(g, checksum);

    std::ofstream mf(path, std::ios::binary | std::ios::trunc);
    if (!mf) throw std::runtime_error("serialize: cannot open '" + path + "'");
    mf.write(json_text.data(), std::streamsize(json_text.size()));
    std::ofstream pf(params_path_for(path), std::ios::binary | std::ios::trunc);
    if (!pf) throw std::runtime_error("serialize: cannot open '" + params_path_for(path) + "'");
    pf.write(param_bytes.data(), std::streamsize(param_bytes.size()));
}

inline std::pair<ModelGraph, ParamStore> deserialize_model(const std::string& path) {
    std::ifstream mf(path, std::ios::binary);
    if (!mf) throw std::runtime_error("load: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        mf >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("load: '" + path + "' is not valid JSON: " + e.what());
    }

    ModelGraph g;
    g.version = j.value("version", "");
    if (g.version != kModelFormatVersion)
        throw std::runtime_error("load: '" + path + "' has version '" + g.version + "', expected '" +
                                 std::string(kModelFormatVersion) + "'");
    g.input.modality = j.at("input").at("modality").get<std::string>();
    g.input.shape = j.at("input").at("shape").get<std::vector<int64_t>>();
    g.heads = j.at("heads").get<std::vector<std::string>>();
    for (const auto& lj : j.at("layers")) {
        LayerSpec l;
        l.id = lj.at("id").get<std::string>();
        l.kind = lj.at("kind").get<std::string>();
        l.hyper = detail::hyper_from_json(lj.at("hyper"));
        l.param_shapes = expected_param_shapes(l);
        // Cross-check the stored shapes against the derived ones.
        const auto& pj = lj.at("params");
        if (pj.size() != l.param_shapes.size())
            throw std::runtime_error("load: layer '" + l.id + "' declares " +
                                     std::to_string(pj.size()) + " parameters, expected " +
                                     std::to_string(l.param_shapes.size()));
        for (const auto& [name, dims] : l.param_shapes)
            if (!pj.contains(name) || pj.at(name).get<std::vector<int64_t>>() != dims)
                throw std::runtime_error("load: layer '" + l.id + "' parameter '" + name +
                                         "' shape mismatch");
        g.layers.push_back(std::move(l));
    }
    for (const auto& ej : j.at("edges")) {
        EdgeSpec e;
        e.src = ej.at("src").get<std::string>();
        e.dst = ej.at("dst").get<std::string>();
        e.grad_stop = ej.at("grad_stop").get<bool>();
        if (ej.contains("adapter")) e.adapter = ej.at("adapter").get<std::string>();
        g.edges.push_back(std::move(e));
    }
    validate_model(g);

    const std::string ppath = params_path_for(path);
    std::ifstream pf(ppath, std::ios::binary);
    if (!pf) throw std::runtime_error("load: cannot open parameter archive '" + ppath + "'");
    std::string param_bytes((std::istreambuf_iterator<char>(pf)), std::istreambuf_iterator<char>());
    const std::string checksum = detail::hex64(detail::bytes_checksum(param_bytes));
    const std::string expected = j.value("params_checksum", "");
    if (checksum != expected)
        throw std::runtime_error("load: parameter archive checksum " + checksum +
                                 " does not match recorded " + expected);

    ParamStore store;
    for (auto& rec : amlg_from_bytes(param_bytes).records) {
        const size_t slash = rec.name.find('/');
        if (slash == std::string::npos)
            throw std::runtime_error("load: malformed parameter record '" + rec.name + "'");
        store.values.emplace(
            std::make_pair(rec.name.substr(0, slash), rec.name.substr(slash + 1)),
            std::move(rec.tensor));
    }
    size_t declared = 0;
    for (const auto& l : g.layers)
        for (const auto& [name, dims] : l.param_shapes) {
            ++declared;
            auto it = store.values.find({l.id, name});
            if (it == store.values.end())
                throw std::runtime_error("load: parameter '" + l.id + "/" + name +
                                         "' missing from archive");
            if (it->second.shape() != dims)
                throw std::runtime_error("load: parameter '" + l.id + "/" + name + "' has shape " +
                                         shape_str(it->second.shape()) + ", expected " +
                                         shape_str(dims));
        }
    if (store.values.size() != declared)
        throw std::runtime_error("load: parameter archive carries records the graph does not declare");
    return {std::move(g), std::move(store)};
}

}  // namespace amalgam
