#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "amalgam/amlg_io.hpp"

namespace amalgam {

// Dataset-global kept positions inside the augmented grid/sequence.
// Never part of any cloud-bound file.
struct PositionSecret {
    std::string modality;  // "image" or "text"
    std::vector<int64_t> kept_rows, kept_cols;  // image
    std::vector<int64_t> kept_positions;        // text
    int64_t aug_h = 0, aug_w = 0;               // image
    int64_t aug_len = 0;                        // text
    double alpha = 0.0;

    bool operator==(const PositionSecret&) const = default;
};

// Everything needed to pull the original model back out of the augmented
// one: the position secret, the original->augmented layer id map, which
// head is real, the decoy keep sets, and the seeds used.
struct SecretBundle {
    PositionSecret positions;
    std::map<std::string, std::string> layer_map;  // original id -> augmented id
    int64_t original_head_index = -1;
    std::map<std::string, std::vector<std::vector<int64_t>>> decoy_keep_sets;  // layer -> sets
    std::vector<int64_t> seeds;

    bool has_model_info() const { return !layer_map.empty(); }
};

inline void save_secret(const std::string& path, const SecretBundle& bundle) {
    std::vector<AmlgRecord> records;
    const PositionSecret& p = bundle.positions;
    if (p.modality == "image") {
        records.push_back({"kept_rows", Tensor::of_i64({int64_t(p.kept_rows.size())}, p.kept_rows)});
        records.push_back({"kept_cols", Tensor::of_i64({int64_t(p.kept_cols.size())}, p.kept_cols)});
        records.push_back({"aug_dims", Tensor::of_i64({2}, {p.aug_h, p.aug_w})});
    } else if (p.modality == "text") {
        records.push_back(
            {"kept_positions", Tensor::of_i64({int64_t(p.kept_positions.size())}, p.kept_positions)});
        records.push_back({"aug_dims", Tensor::of_i64({1}, {p.aug_len})});
    } else {
        throw std::invalid_argument("secret: unknown modality '" + p.modality + "'");
    }
    records.push_back({"modality", text_to_tensor(p.modality)});
    records.push_back({"alpha", Tensor::of_f64({1}, {p.alpha})});
    if (bundle.has_model_info()) {
        nlohmann::json lm = nlohmann::json::object();
        for (const auto& [k, v] : bundle.layer_map) lm[k] = v;
        records.push_back({"layer_map", text_to_tensor(lm.dump())});
        records.push_back({"original_head_index", Tensor::of_i64({1}, {bundle.original_head_index})});
        nlohmann::json dk = nlohmann::json::object();
        for (const auto& [layer, sets] : bundle.decoy_keep_sets) dk[layer] = sets;
        records.push_back({"decoy_keep_sets", text_to_tensor(dk.dump())});
    }
    if (!bundle.seeds.empty())
        records.push_back({"seeds", Tensor::of_i64({int64_t(bundle.seeds.size())}, bundle.seeds)});
    write_amlg(path, records, kAmlgLocalOnly);
}

inline SecretBundle load_secret(const std::string& path) {
    AmlgFile f = read_amlg(path);
    if (f.reserved != kAmlgLocalOnly)
        throw std::runtime_error("secret: '" + path + "' is not flagged local-only");
    SecretBundle b;
    b.positions.modality = tensor_to_text(f.at("modality"));
    b.positions.alpha = f.at("alpha").f64()[0];
    if (b.positions.modality == "image") {
        b.positions.kept_rows = f.at("kept_rows").i64();
        b.positions.kept_cols = f.at("kept_cols").i64();
        const auto& dims = f.at("aug_dims").i64();
        b.positions.aug_h = dims[0];
        b.positions.aug_w = dims[1];
    } else {
        b.positions.kept_positions = f.at("kept_positions").i64();
        b.positions.aug_len = f.at("aug_dims").i64()[0];
    }
    if (f.find("layer_map")) {
        nlohmann::json lm = nlohmann::json::parse(tensor_to_text(f.at("layer_map")));
        for (auto it = lm.begin(); it != lm.end(); ++it)
            b.layer_map[it.key()] = it.value().get<std::string>();
        b.original_head_index = f.at("original_head_index").i64()[0];
        nlohmann::json dk = nlohmann::json::parse(tensor_to_text(f.at("decoy_keep_sets")));
        for (auto it = dk.begin(); it != dk.end(); ++it)
            b.decoy_keep_sets[it.key()] = it.value().get<std::vector<std::vector<int64_t>>>();
    }
    if (const Tensor* s = f.find("seeds")) b.seeds = s->i64();
    return b;
}

}  // namespace amalgam
