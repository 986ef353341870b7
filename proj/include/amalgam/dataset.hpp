#pragma once

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "amalgam/amlg_io.hpp"
#include "amalgam/rng.hpp"
#include "amalgam/tensor.hpp"

namespace amalgam {

struct DatasetMeta {
    std::string modality;  // "image" or "text"
    int64_t classes = 0;
    int64_t vocab = 0;          // text only
    double range_lo = 0.0;      // image value range
    double range_hi = 1.0;

    bool operator==(const DatasetMeta&) const = default;
};

// Samples plus labels. Images are f32 [N,C,H,W]; token sequences i64 [N,L].
struct DatasetContainer {
    DatasetMeta meta;
    Tensor samples;
    Tensor labels;

    int64_t size() const { return samples.dim(0); }

    void validate() const {
        if (labels.dtype() != DType::i64 || labels.rank() != 1)
            throw std::invalid_argument("dataset: labels must be i64 [N]");
        if (samples.dim(0) != labels.dim(0))
            throw std::invalid_argument("dataset: " + std::to_string(samples.dim(0)) +
                                        " samples vs " + std::to_string(labels.dim(0)) + " labels");
        for (int64_t y : labels.i64())
            if (y < 0 || y >= meta.classes)
                throw std::invalid_argument("dataset: label " + std::to_string(y) +
                                            " outside [0," + std::to_string(meta.classes) + ")");
        if (meta.modality == "image") {
            if (samples.dtype() != DType::f32 || samples.rank() != 4)
                throw std::invalid_argument("dataset: image samples must be f32 [N,C,H,W]");
            for (float v : samples.f32())
                if (v < meta.range_lo || v > meta.range_hi)
                    throw std::invalid_argument("dataset: pixel value " + std::to_string(v) +
                                                " outside declared range");
        } else if (meta.modality == "text") {
            if (samples.dtype() != DType::i64 || samples.rank() != 2)
                throw std::invalid_argument("dataset: text samples must be i64 [N,L]");
            for (int64_t v : samples.i64())
                if (v < 0 || v >= meta.vocab)
                    throw std::invalid_argument("dataset: token id " + std::to_string(v) +
                                                " outside vocabulary");
        } else {
            throw std::invalid_argument("dataset: unknown modality '" + meta.modality + "'");
        }
    }

    // Per-sample views
    Tensor sample(int64_t n) const {
        if (meta.modality == "image") {
            const int64_t c = samples.dim(1), h = samples.dim(2), w = samples.dim(3);
            const int64_t stride = c * h * w;
            std::vector<float> buf(samples.f32().begin() + n * stride,
                                   samples.f32().begin() + (n + 1) * stride);
            return Tensor::of_f32({c, h, w}, std::move(buf));
        }
        const int64_t l = samples.dim(1);
        std::vector<int64_t> buf(samples.i64().begin() + n * l, samples.i64().begin() + (n + 1) * l);
        return Tensor::of_i64({l}, std::move(buf));
    }

    int64_t label(int64_t n) const { return labels.i64()[size_t(n)]; }
};

inline void save_dataset(const std::string& path, const DatasetContainer& data) {
    nlohmann::json meta;
    meta["modality"] = data.meta.modality;
    meta["classes"] = data.meta.classes;
    meta["vocab"] = data.meta.vocab;
    meta["range_lo"] = data.meta.range_lo;
    meta["range_hi"] = data.meta.range_hi;
    write_amlg(path, {{"samples", data.samples},
                      {"labels", data.labels},
                      {"meta", text_to_tensor(meta.dump())}});
}

inline DatasetContainer load_dataset(const std::string& path) {
    AmlgFile f = read_amlg(path);
    DatasetContainer data;
    data.samples = f.at("samples");
    data.labels = f.at("labels");
    nlohmann::json meta = nlohmann::json::parse(tensor_to_text(f.at("meta")));
    data.meta.modality = meta.at("modality").get<std::string>();
    data.meta.classes = meta.at("classes").get<int64_t>();
    data.meta.vocab = meta.at("vocab").get<int64_t>();
    data.meta.range_lo = meta.at("range_lo").get<double>();
    data.meta.range_hi = meta.at("range_hi").get<double>();
    data.validate();
    return data;
}

// ---------------------------------------------------------------------------
// Noise sources

struct NoiseConfig {
    enum class Kind { uniform, gaussian, laplace, file };
    Kind kind = Kind::uniform;
    double param = 0.0;  // sigma (gaussian) or scale b (laplace); 0 = range-based default
    double clip_lo = 0.0, clip_hi = 0.0;
    bool has_clip = false;
    std::string file;    // file kind: whitespace-separated numbers
    uint64_t seed = 0;   // stream seed; for file noise, the read offset
};

inline NoiseConfig::Kind noise_kind_from_string(const std::string& s) {
    if (s == "uniform") return NoiseConfig::Kind::uniform;
    if (s == "gaussian") return NoiseConfig::Kind::gaussian;
    if (s == "laplace") return NoiseConfig::Kind::laplace;
    if (s == "file") return NoiseConfig::Kind::file;
    throw std::invalid_argument("noise: unknown kind '" + s + "'");
}

// Deterministic noise draw. [lo, hi] is the valid value range; every value
// is clipped into it. For file noise, cfg.seed is the starting offset into
// the file, so disjoint consumers read disjoint runs.
inline std::vector<double> sample_noise(const NoiseConfig& cfg, int64_t count, double lo,
                                        double hi) {
    if (count < 0) throw std::invalid_argument("noise: count must be >= 0");
    if (cfg.has_clip) {
        lo = std::max(lo, cfg.clip_lo);
        hi = std::min(hi, cfg.clip_hi);
    }
    if (lo > hi) throw std::invalid_argument("noise: empty value range after clipping");
    std::vector<double> out;
    out.reserve(size_t(count));
    const double mid = 0.5 * (lo + hi);
    Rng rng(cfg.seed);
    switch (cfg.kind) {
        case NoiseConfig::Kind::uniform:
            for (int64_t i = 0; i < count; ++i) out.push_back(rng.uniform(lo, hi));
            break;
        case NoiseConfig::Kind::gaussian: {
            const double sigma = cfg.param > 0 ? cfg.param : 0.25 * (hi - lo);
            for (int64_t i = 0; i < count; ++i)
                out.push_back(std::clamp(rng.gaussian(mid, sigma), lo, hi));
            break;
        }
        case NoiseConfig::Kind::laplace: {
            const double b = cfg.param > 0 ? cfg.param : 0.125 * (hi - lo);
            for (int64_t i = 0; i < count; ++i)
                out.push_back(std::clamp(rng.laplace(mid, b), lo, hi));
            break;
        }
        case NoiseConfig::Kind::file: {
            std::ifstream f(cfg.file);
            if (!f) throw std::invalid_argument("noise: cannot open file '" + cfg.file + "'");
            double v = 0;
            for (uint64_t skip = 0; skip < cfg.seed; ++skip)
                if (!(f >> v))
                    throw std::invalid_argument("noise: file '" + cfg.file + "' shorter than offset");
            for (int64_t i = 0; i < count; ++i) {
                if (!(f >> v))
                    throw std::invalid_argument("noise: file '" + cfg.file + "' has fewer than " +
                                                std::to_string(cfg.seed + uint64_t(count)) + " values");
                out.push_back(std::clamp(v, lo, hi));
            }
            break;
        }
    }
    return out;
}

}  // namespace amalgam
