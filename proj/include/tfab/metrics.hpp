#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "tfab/tensor.hpp"

namespace tfab::metrics {

template <class S>
double l2_dist(const Tensor<S>& a, const Tensor<S>& b) {
    a.require_same_shape(b, "l2_dist");
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        acc += d * d;
    }
    return std::sqrt(acc);
}

template <class S>
double cosine_similarity(const Tensor<S>& a, const Tensor<S>& b) {
    a.require_same_shape(b, "cosine_similarity");
    const double na = std::sqrt(squared_norm(a)), nb = std::sqrt(squared_norm(b));
    if (na == 0.0 || nb == 0.0) throw InputError("cosine_similarity: undefined for a zero vector");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

/// gamma == 0 selects classic hard-min DTW; gamma > 0 selects soft-DTW.
struct DtwConfig {
    double gamma = 0.0;
};

namespace detail {

inline double softmin3(double a, double b, double c, double gamma) {
    const double inf = std::numeric_limits<double>::infinity();
    const double m = std::min({a, b, c});
    if (m == inf) return inf;
    double s = 0;
    for (double v : {a, b, c}) {
        if (v != inf) s += std::exp(-(v - m) / gamma);
    }
    return m - gamma * std::log(s);
}

}  // namespace detail

/// Full-alignment DTW between two 1D sequences with squared-Euclidean local
/// cost. Uses O(len(b)) memory.
template <class A, class B>
double dtw(std::span<const A> a, std::span<const B> b, const DtwConfig& cfg = {}) {
    if (a.empty() || b.empty()) throw InputError("dtw: sequences must be non-empty");
    if (!(cfg.gamma >= 0.0) || !std::isfinite(cfg.gamma)) throw ConfigError("dtw: gamma must be finite and >= 0");
    const double inf = std::numeric_limits<double>::infinity();
    const std::size_t m = b.size();
    std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
    prev[0] = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cur[0] = inf;
        const double ai = a[i];
        for (std::size_t j = 0; j < m; ++j) {
            const double d = ai - double(b[j]);
            const double best = cfg.gamma == 0.0 ? std::min({prev[j], prev[j + 1], cur[j]})
                                                 : detail::softmin3(prev[j], prev[j + 1], cur[j], cfg.gamma);
            cur[j + 1] = d * d + best;
        }
        std::swap(prev, cur);
        prev[0] = inf;
    }
    return prev[m];
}

template <class S>
double soft_dtw(std::span<const S> a, std::span<const S> b, double gamma) {
    if (!(gamma > 0.0)) throw ConfigError("soft_dtw: gamma must be > 0");
    return dtw(a, b, DtwConfig{gamma});
}

/// Multichannel score: sum of per-row 1D DTW over [C,T] samples.
template <class S>
double dtw_multichannel(const Tensor<S>& a, const Tensor<S>& b, const DtwConfig& cfg = {}) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
        throw DimensionError("dtw: multichannel inputs must be [C,T] with equal C, got " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    }
    const std::size_t C = a.dim(0), Ta = a.dim(1), Tb = b.dim(1);
    double total = 0;
    for (std::size_t c = 0; c < C; ++c) {
        total += dtw(std::span<const S>(a.raw() + c * Ta, Ta), std::span<const S>(b.raw() + c * Tb, Tb), cfg);
    }
    return total;
}

/// Fraction of successes, or nullopt when there is nothing to score
/// ("no attackable samples").
inline std::optional<double> asr(std::span<const bool> successes) {
    if (successes.empty()) return std::nullopt;
    const auto hits = std::count(successes.begin(), successes.end(), true);
    return double(hits) / double(successes.size());
}

}  // namespace tfab::metrics
