#pragma once

#include <chrono>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "amalgam/model_ir.hpp"
#include "amalgam/secret.hpp"

namespace amalgam {

struct ExtractReport {
    int64_t layers_copied = 0;
    int64_t parameter_count = 0;
    bool checksum_match = false;
    double elapsed_ms = 0;

    std::string to_text() const {
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "extracted %lld layers, %lld parameters, architecture checksum %s, %.3f ms\n",
                      (long long)layers_copied, (long long)parameter_count,
                      checksum_match ? "match" : "MISMATCH", elapsed_ms);
        return buf;
    }
};

namespace detail {

// Architecture fingerprint of a layer sequence, id-free and with skip input
// layers normalized to their plain counterparts.
inline uint64_t arch_checksum(const ModelGraph& g, const std::vector<std::string>& layer_ids) {
    std::string desc;
    for (const std::string& id : layer_ids) {
        LayerSpec l = g.layer(id);
        to_plain_input_layer(l);
        desc += l.kind + "{";
        for (const auto& [k, v] : l.hyper) {
            desc += k + "=";
            if (std::holds_alternative<int64_t>(v))
                desc += std::to_string(std::get<int64_t>(v));
            else
                for (int64_t x : std::get<std::vector<int64_t>>(v)) desc += std::to_string(x) + " ";
            desc += ";";
        }
        desc += "}";
    }
    return hash_name(desc);
}

}  // namespace detail

// Copies the trained original-layer parameters out of the augmented model
// into the plain original architecture. Values are relocated, never
// transformed; the returned model consumes de-augmented inputs. Work is
// proportional to the original parameter count only.
inline std::pair<ParamStore, ExtractReport> extract(const ModelGraph& mprime,
                                                    const ParamStore& pprime,
                                                    const SecretBundle& bundle,
                                                    const ModelGraph& original_def) {
    const auto t0 = std::chrono::steady_clock::now();
    if (!bundle.has_model_info())
        throw std::invalid_argument("extract: secret bundle carries no model mapping");

    ParamStore out;
    ExtractReport report;
    std::vector<std::string> orig_ids, mapped_ids;
    for (const auto& l : original_def.layers) {
        auto it = bundle.layer_map.find(l.id);
        if (it == bundle.layer_map.end())
            throw std::invalid_argument("extract: bundle has no mapping for layer '" + l.id + "'");
        const LayerSpec* aug = mprime.find_layer(it->second);
        if (!aug)
            throw std::invalid_argument("extract: mapped layer '" + it->second +
                                        "' missing from augmented model (layer '" + l.id + "')");
        LayerSpec plain = *aug;
        to_plain_input_layer(plain);
        if (plain.kind != l.kind || plain.hyper != l.hyper)
            throw std::invalid_argument("extract: layer '" + l.id + "' does not match mapped layer '" +
                                        aug->id + "' (kind/hyperparameters differ)");
        for (const auto& [name, dims] : l.param_shapes) {
            const Tensor& src = pprime.at(aug->id, name);
            if (src.shape() != dims)
                throw std::invalid_argument("extract: parameter '" + l.id + "/" + name +
                                            "' shape mismatch");
            out.values.emplace(std::make_pair(l.id, name), src);
            report.parameter_count += src.numel();
        }
        orig_ids.push_back(l.id);
        mapped_ids.push_back(aug->id);
        ++report.layers_copied;
    }
    report.checksum_match = detail::arch_checksum(original_def, orig_ids) ==
                            detail::arch_checksum(mprime, mapped_ids);
    report.elapsed_ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
    return {std::move(out), report};
}

// Overwrites the listed layers' parameters with pretrained values,
// bit-exactly; everything else is untouched.
inline ParamStore apply_pretrained(const ModelGraph& model, const ParamStore& params,
                                   const ParamStore& pretrained,
                                   const std::vector<std::string>& layer_subset) {
    ParamStore out = params;
    for (const std::string& id : layer_subset) {
        const LayerSpec& l = model.layer(id);
        for (const auto& [name, dims] : l.param_shapes) {
            auto it = pretrained.values.find({id, name});
            if (it == pretrained.values.end())
                throw std::invalid_argument("pretrained: missing tensor '" + id + "/" + name + "'");
            if (it->second.shape() != dims)
                throw std::invalid_argument("pretrained: tensor '" + id + "/" + name + "' has shape " +
                                            shape_str(it->second.shape()) + ", layer expects " +
                                            shape_str(dims));
            out.values[{id, name}] = it->second;
        }
    }
    return out;
}

}  // namespace amalgam
