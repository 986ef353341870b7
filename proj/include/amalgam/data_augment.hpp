#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "amalgam/dataset.hpp"
#include "amalgam/rng.hpp"
#include "amalgam/secret.hpp"

namespace amalgam {

inline int64_t augmented_dim(int64_t dim, double alpha) {
    return int64_t(std::llround(double(dim) * (1.0 + alpha)));
}

namespace detail {

// k distinct values from [0, n), sorted; partial Fisher-Yates.
inline std::vector<int64_t> sample_without_replacement(int64_t n, int64_t k, Rng& rng) {
    std::vector<int64_t> pool(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) pool[size_t(i)] = i;
    for (int64_t i = 0; i < k; ++i) {
        const int64_t j = i + int64_t(rng.next_below(uint64_t(n - i)));
        std::swap(pool[size_t(i)], pool[size_t(j)]);
    }
    std::vector<int64_t> out(pool.begin(), pool.begin() + k);
    std::sort(out.begin(), out.end());
    return out;
}

inline std::vector<int64_t> complement_of(const std::vector<int64_t>& sorted_set, int64_t n) {
    std::vector<int64_t> out;
    out.reserve(size_t(n) - sorted_set.size());
    size_t si = 0;
    for (int64_t i = 0; i < n; ++i) {
        if (si < sorted_set.size() && sorted_set[si] == i) {
            ++si;
            continue;
        }
        out.push_back(i);
    }
    return out;
}

}  // namespace detail

// Inserts whole noise rows and columns at dataset-global positions, so the
// kept rows x kept cols sub-grid of every augmented image is the original
// image, bit for bit.
inline std::pair<DatasetContainer, PositionSecret> augment_images(const DatasetContainer& data,
                                                                  double alpha,
                                                                  const NoiseConfig& noise,
                                                                  uint64_t seed) {
    if (alpha < 0) throw std::invalid_argument("augment: alpha must be >= 0");
    if (data.meta.modality != "image")
        throw std::invalid_argument("augment_images: dataset modality is '" + data.meta.modality + "'");
    data.validate();

    const int64_t n = data.samples.dim(0), c = data.samples.dim(1);
    const int64_t h = data.samples.dim(2), w = data.samples.dim(3);
    const int64_t ha = augmented_dim(h, alpha), wa = augmented_dim(w, alpha);

    Rng row_rng(mix_seed(seed, hash_name("rows")));
    Rng col_rng(mix_seed(seed, hash_name("cols")));
    const std::vector<int64_t> ins_rows = detail::sample_without_replacement(ha, ha - h, row_rng);
    const std::vector<int64_t> ins_cols = detail::sample_without_replacement(wa, wa - w, col_rng);

    PositionSecret secret;
    secret.modality = "image";
    secret.kept_rows = detail::complement_of(ins_rows, ha);
    secret.kept_cols = detail::complement_of(ins_cols, wa);
    secret.aug_h = ha;
    secret.aug_w = wa;
    secret.alpha = alpha;

    // Position of each augmented row/col inside the original image, -1 if inserted.
    std::vector<int64_t> row_pos(size_t(ha), -1), col_pos(size_t(wa), -1);
    for (size_t i = 0; i < secret.kept_rows.size(); ++i) row_pos[size_t(secret.kept_rows[i])] = int64_t(i);
    for (size_t i = 0; i < secret.kept_cols.size(); ++i) col_pos[size_t(secret.kept_cols[i])] = int64_t(i);

    // Per-channel empirical value ranges; the default uniform noise matches
    // them so inserted cells are not separable by value.
    std::vector<double> ch_lo(size_t(c), data.meta.range_hi), ch_hi(size_t(c), data.meta.range_lo);
    {
        const float* src = data.samples.f32().data();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t cc = 0; cc < c; ++cc) {
                const float* plane = src + (i * c + cc) * h * w;
                for (int64_t p = 0; p < h * w; ++p) {
                    ch_lo[size_t(cc)] = std::min(ch_lo[size_t(cc)], double(plane[p]));
                    ch_hi[size_t(cc)] = std::max(ch_hi[size_t(cc)], double(plane[p]));
                }
            }
    }

    const int64_t noise_per_plane = ha * wa - h * w;
    const uint64_t noise_seed_base =
        noise.seed ? noise.seed : mix_seed(seed, hash_name("image-noise"));

    DatasetContainer out;
    out.meta = data.meta;
    out.labels = data.labels;
    out.samples = Tensor::zeros({n, c, ha, wa}, DType::f32);
    const float* src = data.samples.f32().data();
    float* dst = out.samples.f32().data();
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t cc = 0; cc < c; ++cc) {
            NoiseConfig cfg = noise;
            cfg.seed = noise.kind == NoiseConfig::Kind::file
                           ? noise.seed + uint64_t((i * c + cc) * noise_per_plane)
                           : mix_seed(noise_seed_base, uint64_t(i * c + cc));
            const std::vector<double> vals =
                sample_noise(cfg, noise_per_plane, ch_lo[size_t(cc)], ch_hi[size_t(cc)]);
            const float* plane = src + (i * c + cc) * h * w;
            float* aplane = dst + (i * c + cc) * ha * wa;
            size_t nv = 0;
            for (int64_t y = 0; y < ha; ++y)
                for (int64_t x = 0; x < wa; ++x) {
                    const int64_t py = row_pos[size_t(y)], px = col_pos[size_t(x)];
                    aplane[y * wa + x] =
                        (py >= 0 && px >= 0) ? plane[py * w + px] : float(vals[nv++]);
                }
        }
    }
    return {std::move(out), std::move(secret)};
}

// Inserts noise tokens at dataset-global sequence positions.
inline std::pair<DatasetContainer, PositionSecret> augment_text(const DatasetContainer& data,
                                                                double alpha,
                                                                const NoiseConfig& noise,
                                                                uint64_t seed) {
    if (alpha < 0) throw std::invalid_argument("augment: alpha must be >= 0");
    if (data.meta.modality != "text")
        throw std::invalid_argument("augment_text: dataset modality is '" + data.meta.modality + "'");
    data.validate();

    const int64_t n = data.samples.dim(0), len = data.samples.dim(1);
    const int64_t la = augmented_dim(len, alpha);
    const int64_t vocab = data.meta.vocab;

    Rng pos_rng(mix_seed(seed, hash_name("positions")));
    const std::vector<int64_t> inserted = detail::sample_without_replacement(la, la - len, pos_rng);

    PositionSecret secret;
    secret.modality = "text";
    secret.kept_positions = detail::complement_of(inserted, la);
    secret.aug_len = la;
    secret.alpha = alpha;

    std::vector<int64_t> pos(size_t(la), -1);
    for (size_t i = 0; i < secret.kept_positions.size(); ++i)
        pos[size_t(secret.kept_positions[i])] = int64_t(i);

    const int64_t noise_per_seq = la - len;
    const uint64_t noise_seed_base =
        noise.seed ? noise.seed : mix_seed(seed, hash_name("text-noise"));

    DatasetContainer out;
    out.meta = data.meta;
    out.labels = data.labels;
    out.samples = Tensor::zeros({n, la}, DType::i64);
    const int64_t* src = data.samples.i64().data();
    int64_t* dst = out.samples.i64().data();
    for (int64_t i = 0; i < n; ++i) {
        std::vector<int64_t> toks(static_cast<size_t>(noise_per_seq));
        if (noise.kind == NoiseConfig::Kind::uniform) {
            Rng rng(mix_seed(noise_seed_base, uint64_t(i)));
            for (auto& t : toks) t = int64_t(rng.next_below(uint64_t(vocab)));
        } else {
            NoiseConfig cfg = noise;
            cfg.seed = noise.kind == NoiseConfig::Kind::file
                           ? noise.seed + uint64_t(i * noise_per_seq)
                           : mix_seed(noise_seed_base, uint64_t(i));
            const std::vector<double> vals = sample_noise(cfg, noise_per_seq, 0, double(vocab - 1));
            for (size_t k = 0; k < toks.size(); ++k)
                toks[k] = std::clamp<int64_t>(std::llround(vals[k]), 0, vocab - 1);
        }
        size_t nv = 0;
        for (int64_t p = 0; p < la; ++p)
            dst[i * la + p] = pos[size_t(p)] >= 0 ? src[i * len + pos[size_t(p)]] : toks[nv++];
    }
    return {std::move(out), std::move(secret)};
}

inline std::pair<DatasetContainer, PositionSecret> augment_dataset(const DatasetContainer& data,
                                                                   double alpha,
                                                                   const NoiseConfig& noise,
                                                                   uint64_t seed) {
    return data.meta.modality == "image" ? augment_images(data, alpha, noise, seed)
                                         : augment_text(data, alpha, noise, seed);
}

// Exact inverse of augmentation on the original cells: gathers kept
// positions, drops everything else.
inline DatasetContainer deaugment(const DatasetContainer& data, const PositionSecret& secret) {
    DatasetContainer out;
    out.meta = data.meta;
    out.labels = data.labels;
    if (secret.modality != data.meta.modality)
        throw std::invalid_argument("deaugment: secret modality '" + secret.modality +
                                    "' does not match dataset '" + data.meta.modality + "'");
    if (data.meta.modality == "image") {
        const int64_t n = data.samples.dim(0), c = data.samples.dim(1);
        const int64_t ha = data.samples.dim(2), wa = data.samples.dim(3);
        if (ha != secret.aug_h || wa != secret.aug_w)
            throw std::invalid_argument("deaugment: dataset is " + std::to_string(ha) + "x" +
                                        std::to_string(wa) + " but secret expects " +
                                        std::to_string(secret.aug_h) + "x" +
                                        std::to_string(secret.aug_w));
        const int64_t h = int64_t(secret.kept_rows.size()), w = int64_t(secret.kept_cols.size());
        out.samples = Tensor::zeros({n, c, h, w}, DType::f32);
        const float* src = data.samples.f32().data();
        float* dst = out.samples.f32().data();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t cc = 0; cc < c; ++cc) {
                const float* aplane = src + (i * c + cc) * ha * wa;
                float* plane = dst + (i * c + cc) * h * w;
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t x = 0; x < w; ++x)
                        plane[y * w + x] =
                            aplane[secret.kept_rows[size_t(y)] * wa + secret.kept_cols[size_t(x)]];
            }
    } else {
        const int64_t n = data.samples.dim(0), la = data.samples.dim(1);
        if (la != secret.aug_len)
            throw std::invalid_argument("deaugment: sequence length " + std::to_string(la) +
                                        " but secret expects " + std::to_string(secret.aug_len));
        const int64_t len = int64_t(secret.kept_positions.size());
        out.samples = Tensor::zeros({n, len}, DType::i64);
        const int64_t* src = data.samples.i64().data();
        int64_t* dst = out.samples.i64().data();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t p = 0; p < len; ++p)
                dst[i * len + p] = src[i * la + secret.kept_positions[size_t(p)]];
    }
    return out;
}

}  // namespace amalgam
