#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "amalgam/data_augment.hpp"

namespace amalgam {

// Privacy loss: the fraction of a sample's content that is original.
inline double privacy_loss(double alpha) {
    if (alpha < 0) throw std::invalid_argument("privacy_loss: alpha must be >= 0");
    return 1.0 / (1.0 + alpha);
}

// Computing-performance loss, the exact complement of the privacy loss.
inline double perf_loss(double alpha) { return 1.0 - privacy_loss(alpha); }

// C(n, k) when it fits in 64 bits; the running product C(n-k+i, i) is an
// integer at every step, so the division below is exact.
inline std::optional<uint64_t> exact_binomial(int64_t n, int64_t k) {
    if (n < 0 || k < 0 || k > n) return uint64_t(0);
    if (k > n - k) k = n - k;
    unsigned __int128 c = 1;
    for (int64_t i = 1; i <= k; ++i) {
        c *= (unsigned __int128)(uint64_t(n - k + i));
        c /= (unsigned __int128)(uint64_t(i));
        if (c > (unsigned __int128)UINT64_MAX) return std::nullopt;
    }
    return uint64_t(c);
}

inline double log10_binomial(int64_t n, int64_t k) {
    if (n < 0 || k < 0 || k > n) throw std::invalid_argument("log10_binomial: need 0 <= k <= n");
    if (k == 0 || k == n) return 0.0;
    return (std::lgamma(double(n) + 1.0) - std::lgamma(double(k) + 1.0) -
            std::lgamma(double(n - k) + 1.0)) /
           std::log(10.0);
}

struct SearchSpace {
    double per_pixel_log10 = 0;    // cell-subset count, the adversary's view
    double structural_log10 = 0;   // row/column-insertion count, what the
                                   // augmenter actually draws from
    std::optional<uint64_t> per_pixel_exact;
};

// Brute-force search space for locating the original cells of one sample.
// Image: per_pixel = channels * C(Ha*Wa, inserted cells per channel),
// structural = C(Ha,H) * C(Wa,W). Text: both are C(La, inserted).
inline SearchSpace search_space_log10(const std::string& modality, int64_t channels,
                                      const std::vector<int64_t>& original_dims, double alpha) {
    if (alpha < 0) throw std::invalid_argument("search_space: alpha must be >= 0");
    for (int64_t d : original_dims)
        if (d < 1) throw std::invalid_argument("search_space: dims must be >= 1");
    SearchSpace s;
    if (modality == "image") {
        if (original_dims.size() != 2 || channels < 1)
            throw std::invalid_argument("search_space: image needs channels and [H,W]");
        const int64_t h = original_dims[0], w = original_dims[1];
        const int64_t ha = augmented_dim(h, alpha), wa = augmented_dim(w, alpha);
        const int64_t cells = ha * wa, inserted = cells - h * w;
        s.per_pixel_log10 = std::log10(double(channels)) + log10_binomial(cells, inserted);
        s.structural_log10 = log10_binomial(ha, h) + log10_binomial(wa, w);
        if (auto c = exact_binomial(cells, inserted)) {
            const unsigned __int128 total = (unsigned __int128)(*c) * (unsigned __int128)(uint64_t(channels));
            if (total <= (unsigned __int128)UINT64_MAX) s.per_pixel_exact = uint64_t(total);
        }
    } else if (modality == "text") {
        if (original_dims.size() != 1)
            throw std::invalid_argument("search_space: text needs [L]");
        const int64_t len = original_dims[0];
        const int64_t la = augmented_dim(len, alpha);
        s.per_pixel_log10 = log10_binomial(la, la - len);
        s.structural_log10 = s.per_pixel_log10;
        s.per_pixel_exact = exact_binomial(la, la - len);
    } else {
        throw std::invalid_argument("search_space: unknown modality '" + modality + "'");
    }
    return s;
}

struct PrivacyReport {
    double alpha = 0;
    double epsilon = 1;
    double rho = 0;
    double per_pixel_log10 = 0;
    double structural_log10 = 0;
    std::optional<uint64_t> arrangements;  // exact count when representable
    std::string modality;
    int64_t channels = 1;
    std::vector<int64_t> original_dims, augmented_dims;
    int64_t params_original = 0;  // P
    int64_t params_added = 0;     // A_m
    int subnets = 0;
};

inline PrivacyReport make_report(const std::string& modality, int64_t channels,
                                 const std::vector<int64_t>& original_dims, double alpha,
                                 int64_t params_original = 0, int64_t params_added = 0,
                                 int subnets = 0) {
    PrivacyReport r;
    r.alpha = alpha;
    r.epsilon = privacy_loss(alpha);
    r.rho = perf_loss(alpha);
    const SearchSpace s = search_space_log10(modality, channels, original_dims, alpha);
    r.per_pixel_log10 = s.per_pixel_log10;
    r.structural_log10 = s.structural_log10;
    r.arrangements = s.per_pixel_exact;
    r.modality = modality;
    r.channels = channels;
    r.original_dims = original_dims;
    for (int64_t d : original_dims) r.augmented_dims.push_back(augmented_dim(d, alpha));
    r.params_original = params_original;
    r.params_added = params_added;
    r.subnets = subnets;
    return r;
}

inline std::string report_text(const PrivacyReport& r) {
    char buf[256];
    std::string out;
    auto dims_str = [](const std::vector<int64_t>& d) {
        std::string s;
        for (size_t i = 0; i < d.size(); ++i) s += (i ? "x" : "") + std::to_string(d[i]);
        return s;
    };
    std::snprintf(buf, sizeof(buf), "alpha                 %.4f\n", r.alpha);
    out += buf;
    std::snprintf(buf, sizeof(buf), "privacy loss eps      %.4f\n", r.epsilon);
    out += buf;
    std::snprintf(buf, sizeof(buf), "perf loss rho         %.4f\n", r.rho);
    out += buf;
    out += "modality              " + r.modality + " (" + dims_str(r.original_dims) + " -> " +
           dims_str(r.augmented_dims) + ", channels " + std::to_string(r.channels) + ")\n";
    std::snprintf(buf, sizeof(buf), "search space (cells)  10^%.2f", r.per_pixel_log10);
    out += buf;
    if (r.arrangements) out += " = " + std::to_string(*r.arrangements) + " arrangements";
    out += "\n";
    std::snprintf(buf, sizeof(buf), "search space (rows)   10^%.2f\n", r.structural_log10);
    out += buf;
    if (r.params_original > 0) {
        out += "parameters P          " + std::to_string(r.params_original) + "\n";
        out += "parameters added A_m  " + std::to_string(r.params_added) + "\n";
        out += "decoy sub-networks    " + std::to_string(r.subnets) + "\n";
    }
    return out;
}

// Trade-off curve over an alpha grid.
// CSV: alpha,epsilon,rho,log10_space_pp,log10_space_struct
inline std::string privacy_curve_csv(const std::string& modality, int64_t channels,
                                     const std::vector<int64_t>& original_dims,
                                     const std::vector<double>& alphas) {
    std::string out = "alpha,epsilon,rho,log10_space_pp,log10_space_struct\n";
    char buf[192];
    for (double a : alphas) {
        const SearchSpace s = search_space_log10(modality, channels, original_dims, a);
        std::snprintf(buf, sizeof(buf), "%.6g,%.12g,%.12g,%.12g,%.12g\n", a, privacy_loss(a),
                      perf_loss(a), s.per_pixel_log10, s.structural_log10);
        out += buf;
    }
    return out;
}

inline std::vector<double> alpha_grid(double lo, double hi, int points) {
    std::vector<double> grid;
    for (int i = 0; i < points; ++i)
        grid.push_back(lo + (hi - lo) * double(i) / double(points - 1));
    return grid;
}

}  // namespace amalgam
