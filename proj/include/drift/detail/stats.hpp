#ifndef DRIFT_DETAIL_STATS_HPP
#define DRIFT_DETAIL_STATS_HPP

#include "drift/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

namespace drift::detail {

/// Pearson correlation. Throws DegenerateInput when either side has zero variance.
inline double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ValidationError("pearson: length mismatch");
    if (a.size() < 2) throw DegenerateInput("pearson: need at least 2 values");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) throw DegenerateInput("pearson: zero variance");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// 1-based ranks; ties share the mean of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

inline double spearman(std::span<const double> a, std::span<const double> b) {
    auto ra = average_ranks(a);
    auto rb = average_ranks(b);
    return pearson(ra, rb);
}

} // namespace drift::detail

#endif
