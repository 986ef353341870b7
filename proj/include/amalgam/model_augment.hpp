#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "amalgam/data_augment.hpp"
#include "amalgam/model_ir.hpp"
#include "amalgam/secret.hpp"

namespace amalgam {

struct AugmentationPlan {
    double alpha = 0.0;
    int subnets = 0;                     // decoy count s
    std::vector<int64_t> decoy_budgets;  // parameter budget per decoy
    NoiseConfig noise;                   // decoy parameter noise
    int cross_link_count = 1;
    uint64_t seed = 0;
};

namespace detail {

// The original model must be a single chain ending in one linear head for
// mirroring to be defined.
inline std::vector<const LayerSpec*> original_chain(const ModelGraph& g, const GraphLayout& lay) {
    if (g.heads.size() != 1)
        throw std::invalid_argument("augment: original model must have exactly one head");
    if (!lay.adapters.empty())
        throw std::invalid_argument("augment: original model must not contain adapters");
    for (const auto& [dst, edges] : lay.in_edges)
        if (edges.size() > 1)
            throw std::invalid_argument("augment: original model must be a simple chain");
    std::vector<const LayerSpec*> chain;
    for (const std::string& id : lay.order) chain.push_back(&g.layer(id));
    if (chain.empty() || chain.back()->id != g.heads[0])
        throw std::invalid_argument("augment: original head must be the last chain layer");
    if (chain.back()->kind != "linear")
        throw std::invalid_argument("augment: original model must end in a linear head");
    return chain;
}

// Scalable width of a stage: conv out_channels, non-head linear
// out_features, embedding embed_dim; -1 for everything else.
inline std::vector<int64_t> chain_widths(const std::vector<const LayerSpec*>& chain) {
    std::vector<int64_t> widths(chain.size(), -1);
    for (size_t i = 0; i < chain.size(); ++i) {
        const LayerSpec& l = *chain[i];
        if (l.kind == "conv2d" || l.kind == "skip_conv2d")
            widths[i] = l.hyper_int("out_channels");
        else if (l.kind == "linear" && i + 1 < chain.size())
            widths[i] = l.hyper_int("out_features");
        else if (l.kind == "embedding" || l.kind == "skip_embedding")
            widths[i] = l.hyper_int("embed_dim");
    }
    return widths;
}

// Builds the decoy chain (plain input layer; the skip rewrite happens at
// materialization). Ids are stage indices as placeholders.
inline std::vector<LayerSpec> build_mirror(const std::vector<const LayerSpec*>& chain,
                                           const std::vector<int64_t>& widths,
                                           const std::vector<int64_t>& input_shape) {
    std::vector<LayerSpec> out;
    std::vector<int64_t> shape = input_shape;
    for (size_t i = 0; i < chain.size(); ++i) {
        const LayerSpec& o = *chain[i];
        LayerSpec l;
        l.id = std::to_string(i);
        if (o.kind == "conv2d" || o.kind == "skip_conv2d") {
            l = conv_layer(l.id, shape.at(0), widths[i], o.hyper_int("kernel_h"),
                           o.hyper_int("stride"), o.hyper_int("padding"));
        } else if (o.kind == "linear") {
            const int64_t out_f = i + 1 < chain.size() ? widths[i] : o.hyper_int("out_features");
            l = linear_layer(l.id, shape.at(0), out_f);
        } else if (o.kind == "embedding" || o.kind == "skip_embedding") {
            l = embedding_layer(l.id, o.hyper_int("vocab"), widths[i]);
        } else if (o.kind == "maxpool2d" || o.kind == "avgpool2d") {
            l = pool_layer(l.id, o.kind, o.hyper_int("pool"));
        } else {
            l = unary_layer(l.id, o.kind);
        }
        shape = layer_out_shape(l, shape);
        out.push_back(std::move(l));
    }
    return out;
}

inline int64_t spec_param_count(const LayerSpec& l) {
    int64_t total = 0;
    for (const auto& [name, dims] : expected_param_shapes(l)) {
        int64_t n = 1;
        for (int64_t d : dims) n *= d;
        total += n;
    }
    return total;
}

// Output shape of every stage of a (built) chain, starting from input_shape.
inline std::vector<std::vector<int64_t>> chain_shapes(const std::vector<LayerSpec>& chain,
                                                      const std::vector<int64_t>& input_shape) {
    std::vector<std::vector<int64_t>> shapes;
    std::vector<int64_t> shape = input_shape;
    for (const auto& l : chain) {
        shape = layer_out_shape(l, shape);
        shapes.push_back(shape);
    }
    return shapes;
}

// Adapter spec projecting src_shape onto dst_shape (1x1 conv or linear).
inline LayerSpec adapter_spec(const std::string& id, const std::vector<int64_t>& src_shape,
                              const std::vector<int64_t>& dst_shape) {
    if (src_shape.size() == 3 && dst_shape.size() == 3) {
        if (src_shape[1] != dst_shape[1] || src_shape[2] != dst_shape[2])
            throw std::runtime_error("augment: adapter cannot match spatial dims for edge at '" + id + "'");
        return conv_layer(id, src_shape[0], dst_shape[0], 1);
    }
    if (src_shape.size() == 1 && dst_shape.size() == 1)
        return linear_layer(id, src_shape[0], dst_shape[0]);
    throw std::runtime_error("augment: no adapter between ranks " +
                             std::to_string(src_shape.size()) + " and " +
                             std::to_string(dst_shape.size()));
}

// Full parameter count of one decoy: mirrored chain plus the adapters of
// its incoming cross-links.
inline int64_t decoy_param_count(const std::vector<const LayerSpec*>& chain,
                                 const std::vector<int64_t>& widths,
                                 const std::vector<int64_t>& input_shape,
                                 const std::vector<std::vector<int64_t>>& orig_shapes,
                                 const std::vector<size_t>& link_stages) {
    const std::vector<LayerSpec> mirror = build_mirror(chain, widths, input_shape);
    int64_t total = 0;
    for (const auto& l : mirror) total += spec_param_count(l);
    const std::vector<std::vector<int64_t>> dec_shapes = chain_shapes(mirror, input_shape);
    for (size_t k : link_stages)
        total += spec_param_count(adapter_spec("a", orig_shapes[k], dec_shapes[k]));
    return total;
}

inline std::vector<int64_t> scale_widths(const std::vector<int64_t>& base, double gamma) {
    std::vector<int64_t> out = base;
    for (auto& w : out)
        if (w > 0) w = std::max<int64_t>(1, std::llround(double(w) * gamma));
    return out;
}

// Chooses decoy widths whose realized parameter count lands as close to the
// budget as the integer grid allows: bisect a global multiplier, then walk
// the finest-grained width by +-1.
inline std::vector<int64_t> solve_decoy_widths(const std::vector<const LayerSpec*>& chain,
                                               const std::vector<int64_t>& input_shape,
                                               const std::vector<std::vector<int64_t>>& orig_shapes,
                                               const std::vector<size_t>& link_stages,
                                               int64_t budget) {
    const std::vector<int64_t> base = chain_widths(chain);
    auto count = [&](const std::vector<int64_t>& w) {
        return decoy_param_count(chain, w, input_shape, orig_shapes, link_stages);
    };

    double lo = 1e-3, hi = 1.0;
    while (count(scale_widths(base, hi)) < budget && hi < 64.0) hi *= 2.0;
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        (count(scale_widths(base, mid)) < budget ? lo : hi) = mid;
    }
    std::vector<int64_t> widths = scale_widths(base, lo);
    if (std::llabs(count(scale_widths(base, hi)) - budget) < std::llabs(count(widths) - budget))
        widths = scale_widths(base, hi);

    // Fine-tune along the knob with the smallest per-unit parameter cost.
    size_t knob = widths.size();
    int64_t knob_unit = 0;
    for (size_t i = 0; i < widths.size(); ++i) {
        if (widths[i] <= 0) continue;
        std::vector<int64_t> probe = widths;
        probe[i] += 1;
        const int64_t unit = count(probe) - count(widths);
        if (unit > 0 && (knob == widths.size() || unit < knob_unit)) {
            knob = i;
            knob_unit = unit;
        }
    }
    if (knob < widths.size()) {
        for (int guard = 0; guard < 1024; ++guard) {
            const int64_t err = count(widths) - budget;
            std::vector<int64_t> probe = widths;
            probe[knob] += err > 0 ? -1 : 1;
            if (probe[knob] < 1) break;
            if (std::llabs(count(probe) - budget) >= std::llabs(err)) break;
            widths = std::move(probe);
        }
    }
    return widths;
}

inline void fill_param_noise(Tensor& t, const NoiseConfig& noise, uint64_t stream_seed,
                             int64_t fan_in) {
    const double bound = std::sqrt(1.0 / double(fan_in));
    NoiseConfig cfg = noise;
    cfg.seed = stream_seed;
    double lo = -bound, hi = bound;
    if (cfg.kind != NoiseConfig::Kind::uniform || cfg.has_clip) {
        // Range defaults apply only to uniform draws; other kinds use their
        // own scale around zero unless the user clipped explicitly.
        lo = cfg.has_clip ? cfg.clip_lo : -1e30;
        hi = cfg.has_clip ? cfg.clip_hi : 1e30;
        cfg.has_clip = false;
        if (cfg.param <= 0) cfg.param = cfg.kind == NoiseConfig::Kind::gaussian ? bound : 0.5 * bound;
    }
    const std::vector<double> vals = sample_noise(cfg, t.numel(), lo, hi);
    float* p = t.f32().data();
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = float(vals[size_t(i)]);
}

}  // namespace detail

// Splits the augmentation budget round(alpha * P) across s decoy
// sub-networks. alpha = 0 yields a plan with no decoys.
inline AugmentationPlan plan_subnets(const ModelGraph& g, double alpha, int subnets,
                                     uint64_t seed) {
    if (alpha < 0) throw std::invalid_argument("plan: alpha must be >= 0");
    if (subnets < 1) throw std::invalid_argument("plan: subnet count must be >= 1");
    AugmentationPlan plan;
    plan.alpha = alpha;
    plan.seed = seed;
    if (alpha == 0) return plan;

    const GraphLayout lay = analyze_model(g);
    const auto chain = detail::original_chain(g, lay);
    int64_t min_size = 0;
    {
        std::vector<int64_t> ones = detail::chain_widths(chain);
        for (auto& w : ones)
            if (w > 0) w = 1;
        for (const auto& l : detail::build_mirror(chain, ones, g.input.shape))
            min_size += detail::spec_param_count(l);
    }
    const int64_t total = std::llround(alpha * double(param_count(g)));
    const int64_t per = total / subnets;
    if (per < std::max<int64_t>(1, min_size))
        throw std::invalid_argument(
            "plan: budget " + std::to_string(total) + " cannot fit " + std::to_string(subnets) +
            " decoys of at least " + std::to_string(min_size) + " parameters; use fewer subnets");
    plan.subnets = subnets;
    plan.decoy_budgets.assign(size_t(subnets), per);
    for (int64_t r = 0; r < total % subnets; ++r) plan.decoy_budgets[size_t(r)] += 1;
    return plan;
}

struct AugmentResult {
    ModelGraph graph;
    ParamStore params;
    SecretBundle bundle;
};

// Rewrites the original model into the augmented one: relabeled original
// layers with a skip input layer, s decoy sub-networks with their own skip
// inputs and scaled widths, gradient-stopped cross-links original->decoy,
// and shuffled heads. Original parameter values are preserved bit for bit.
inline AugmentResult augment_model(const ModelGraph& g, const ParamStore& params,
                                   const AugmentationPlan& plan,
                                   const PositionSecret& secret) {
    const GraphLayout lay = analyze_model(g);
    const auto chain = detail::original_chain(g, lay);
    const size_t stages = chain.size();
    Rng rng(mix_seed(plan.seed, hash_name("model-augment")));

    // Input compatibility with the position secret.
    std::vector<int64_t> aug_input_shape;
    if (g.input.modality == "image") {
        if (secret.modality != "image" || g.input.shape.size() != 3 ||
            int64_t(secret.kept_rows.size()) != g.input.shape[1] ||
            int64_t(secret.kept_cols.size()) != g.input.shape[2])
            throw std::invalid_argument("augment: position secret does not match model input " +
                                        shape_str(g.input.shape));
        aug_input_shape = {g.input.shape[0], secret.aug_h, secret.aug_w};
    } else {
        if (secret.modality != "text" || g.input.shape.size() != 1 ||
            int64_t(secret.kept_positions.size()) != g.input.shape[0])
            throw std::invalid_argument("augment: position secret does not match model input " +
                                        shape_str(g.input.shape));
        aug_input_shape = {secret.aug_len};
    }

    const std::vector<std::vector<int64_t>> orig_shapes =
        detail::chain_shapes([&] {
            std::vector<LayerSpec> c;
            for (const auto* l : chain) c.push_back(*l);
            return c;
        }(), g.input.shape);

    // Valid cross-link stages: source k feeds the layer after stage k; only
    // rank-1/rank-3 activations get adapters, and a target stage must exist.
    std::vector<size_t> valid_stages;
    for (size_t k = 0; k + 1 < stages; ++k)
        if (orig_shapes[k].size() == 1 || orig_shapes[k].size() == 3) valid_stages.push_back(k);

    // Adapter floor cost per stage (decoy widths at their minimum). A
    // flattened-feature projection can cost more than an entire decoy, so
    // stages are sampled only from the affordable ones.
    std::vector<int64_t> stage_floor(valid_stages.size(), 0);
    {
        std::vector<int64_t> ones = detail::chain_widths(chain);
        for (auto& w : ones)
            if (w > 0) w = 1;
        const auto min_shapes =
            detail::chain_shapes(detail::build_mirror(chain, ones, g.input.shape), g.input.shape);
        for (size_t i = 0; i < valid_stages.size(); ++i)
            stage_floor[i] = detail::spec_param_count(
                detail::adapter_spec("a", orig_shapes[valid_stages[i]], min_shapes[valid_stages[i]]));
    }

    // Decoy architectures.
    struct Decoy {
        std::vector<LayerSpec> layers;
        std::vector<size_t> link_stages;
        std::vector<std::vector<int64_t>> shapes;
    };
    std::vector<Decoy> decoys;
    for (int d = 0; d < plan.subnets; ++d) {
        Decoy dec;
        const int64_t budget = plan.decoy_budgets[size_t(d)];
        const int64_t links = std::max(plan.cross_link_count, 0);
        std::vector<size_t> pool;
        for (size_t i = 0; i < valid_stages.size(); ++i)
            if (links > 0 && stage_floor[i] * links * 2 <= budget) pool.push_back(valid_stages[i]);
        if (pool.empty() && links > 0 && !valid_stages.empty()) {
            const size_t cheapest =
                size_t(std::min_element(stage_floor.begin(), stage_floor.end()) -
                       stage_floor.begin());
            pool.push_back(valid_stages[cheapest]);
        }
        size_t want = std::min(size_t(links), pool.size());
        for (size_t i = 0; i < want; ++i) {
            const size_t j = i + size_t(rng.next_below(pool.size() - i));
            std::swap(pool[i], pool[j]);
        }
        dec.link_stages.assign(pool.begin(), pool.begin() + want);
        std::sort(dec.link_stages.begin(), dec.link_stages.end());
        const std::vector<int64_t> widths = detail::solve_decoy_widths(
            chain, g.input.shape, orig_shapes, dec.link_stages, plan.decoy_budgets[size_t(d)]);
        dec.layers = detail::build_mirror(chain, widths, g.input.shape);
        dec.shapes = detail::chain_shapes(dec.layers, g.input.shape);
        decoys.push_back(std::move(dec));
    }

    // Id assignment: one seeded permutation over all layers-to-be, so
    // neither id value nor file position reveals sub-network membership.
    size_t total_layers = stages;
    for (const auto& d : decoys) total_layers += d.layers.size() + d.link_stages.size();
    std::vector<size_t> id_perm(total_layers);
    for (size_t i = 0; i < total_layers; ++i) id_perm[i] = i;
    for (size_t i = 0; i + 1 < total_layers; ++i) {
        const size_t j = i + size_t(rng.next_below(id_perm.size() - i));
        std::swap(id_perm[i], id_perm[j]);
    }
    size_t next_slot = 0;
    auto fresh_id = [&] {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "n%03zu", id_perm[next_slot++]);
        return std::string(buf);
    };

    AugmentResult res;
    res.bundle.positions = secret;
    res.bundle.seeds = {int64_t(plan.seed)};
    res.graph.input = {g.input.modality, aug_input_shape};

    // Original layers, relabeled, first layer rewritten to its skip variant.
    std::vector<std::string> orig_ids(stages);
    for (size_t i = 0; i < stages; ++i) {
        LayerSpec l = *chain[i];
        l.id = fresh_id();
        orig_ids[i] = l.id;
        res.bundle.layer_map[chain[i]->id] = l.id;
        if (i == 0) {
            if (l.kind == "conv2d")
                to_skip_conv(l, secret.kept_rows, secret.kept_cols);
            else if (l.kind == "embedding")
                to_skip_embedding(l, detail::complement_of(secret.kept_positions, secret.aug_len));
            else
                throw std::invalid_argument("augment: first original layer must be conv2d or embedding");
            l.param_shapes = expected_param_shapes(l);
        }
        res.graph.layers.push_back(std::move(l));
        for (const auto& [name, dims] : chain[i]->param_shapes)
            res.params.values.emplace(std::make_pair(orig_ids[i], name),
                                      params.at(chain[i]->id, name));
    }
    for (size_t i = 0; i + 1 < stages; ++i)
        res.graph.edges.push_back({orig_ids[i], orig_ids[i + 1], false, ""});

    // Decoys: relabel, rewrite first layer to a skip layer with a random
    // keep set of the same cardinality, wire the chain and the
    // gradient-stopped cross-links from original activations.
    std::vector<std::string> head_ids = {orig_ids[stages - 1]};
    for (auto& dec : decoys) {
        std::vector<std::string> ids(dec.layers.size());
        for (size_t i = 0; i < dec.layers.size(); ++i) {
            LayerSpec& l = dec.layers[i];
            l.id = fresh_id();
            ids[i] = l.id;
            if (i == 0) {
                if (l.kind == "conv2d") {
                    Rng krng(rng.next_u64());
                    auto rows = detail::sample_without_replacement(
                        secret.aug_h, int64_t(secret.kept_rows.size()), krng);
                    auto cols = detail::sample_without_replacement(
                        secret.aug_w, int64_t(secret.kept_cols.size()), krng);
                    res.bundle.decoy_keep_sets[l.id] = {rows, cols};
                    to_skip_conv(l, std::move(rows), std::move(cols));
                } else {
                    Rng krng(rng.next_u64());
                    auto kept = detail::sample_without_replacement(
                        secret.aug_len, int64_t(secret.kept_positions.size()), krng);
                    res.bundle.decoy_keep_sets[l.id] = {kept};
                    to_skip_embedding(l, detail::complement_of(kept, secret.aug_len));
                }
                l.param_shapes = expected_param_shapes(l);
            }
        }
        for (size_t i = 0; i + 1 < dec.layers.size(); ++i)
            res.graph.edges.push_back({ids[i], ids[i + 1], false, ""});
        for (size_t k : dec.link_stages) {
            LayerSpec ad = detail::adapter_spec(fresh_id(), orig_shapes[k], dec.shapes[k]);
            res.graph.edges.push_back({orig_ids[k], ids[k + 1], true, ad.id});
            res.graph.layers.push_back(std::move(ad));
        }
        head_ids.push_back(ids.back());
        for (auto& l : dec.layers) res.graph.layers.push_back(std::move(l));
    }

    // Decoy and adapter parameters: weights from the plan's noise source,
    // biases zero (matching how freshly initialized layers look).
    for (const auto& l : res.graph.layers) {
        for (const auto& [name, dims] : l.param_shapes) {
            if (res.params.values.count({l.id, name})) continue;
            Tensor t = Tensor::zeros(dims, DType::f32);
            if (name != "bias")
                detail::fill_param_noise(t, plan.noise, mix_seed(plan.seed, hash_name(l.id)),
                                         fan_in_of(l, name, dims));
            res.params.values.emplace(std::make_pair(l.id, name), std::move(t));
        }
    }

    // Heads in seeded-random order; the bundle records which is original.
    std::vector<size_t> head_perm(head_ids.size());
    for (size_t i = 0; i < head_ids.size(); ++i) head_perm[i] = i;
    for (size_t i = 0; i + 1 < head_perm.size(); ++i) {
        const size_t j = i + size_t(rng.next_below(head_perm.size() - i));
        std::swap(head_perm[i], head_perm[j]);
    }
    for (size_t i = 0; i < head_perm.size(); ++i) {
        res.graph.heads.push_back(head_ids[head_perm[i]]);
        if (head_perm[i] == 0) res.bundle.original_head_index = int64_t(i);
    }

    // Canonical file order: layers by id, edges by (dst, src).
    std::sort(res.graph.layers.begin(), res.graph.layers.end(),
              [](const LayerSpec& a, const LayerSpec& b) { return a.id < b.id; });
    std::sort(res.graph.edges.begin(), res.graph.edges.end(),
              [](const EdgeSpec& a, const EdgeSpec& b) {
                  return std::tie(a.dst, a.src, a.adapter) < std::tie(b.dst, b.src, b.adapter);
              });
    validate_model(res.graph);
    return res;
}

// True when no decoy head can be reached from any original layer without
// crossing a grad_stop edge, i.e. decoy losses cannot move original
// parameters.
inline bool audit_grad_isolation(const ModelGraph& g, const SecretBundle& bundle) {
    std::set<std::string> original_layers;
    for (const auto& [orig, aug] : bundle.layer_map) original_layers.insert(aug);
    std::set<std::string> decoy_heads;
    for (size_t i = 0; i < g.heads.size(); ++i)
        if (int64_t(i) != bundle.original_head_index) decoy_heads.insert(g.heads[i]);

    for (const std::string& start : original_layers) {
        std::vector<std::string> frontier = {start};
        std::set<std::string> seen = {start};
        while (!frontier.empty()) {
            const std::string cur = frontier.back();
            frontier.pop_back();
            if (decoy_heads.count(cur)) return false;
            for (const auto& e : g.edges)
                if (e.src == cur && !e.grad_stop && !seen.count(e.dst)) {
                    seen.insert(e.dst);
                    frontier.push_back(e.dst);
                }
        }
    }
    return true;
}

}  // namespace amalgam
