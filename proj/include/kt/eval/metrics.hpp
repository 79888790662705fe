#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "kt/error.hpp"
#include "kt/math.hpp"

namespace kt {

namespace metric_detail {
inline void check(std::span<const double> p, std::span<const int> y) {
    if (p.size() != y.size()) throw ValidationError("predictions and labels differ in length");
    if (p.empty()) throw ValidationError("metric over an empty set");
}
}  // namespace metric_detail

/// Fraction of rows where (p >= threshold) matches the label; p = threshold counts as a predicted 1.
inline double accuracy(std::span<const double> p, std::span<const int> y, double threshold = 0.5) {
    metric_detail::check(p, y);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < p.size(); ++i) hit += (p[i] >= threshold) == (y[i] != 0);
    return static_cast<double>(hit) / static_cast<double>(p.size());
}

inline double log_loss(std::span<const double> p, std::span<const int> y) {
    metric_detail::check(p, y);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = clamp_probability(p[i]);
        s -= y[i] ? std::log(q) : std::log1p(-q);
    }
    return s / static_cast<double>(p.size());
}

/// Rank-statistic AUC with tied scores sharing their average rank. Empty for single-class labels.
inline std::optional<double> auc(std::span<const double> p, std::span<const int> y) {
    metric_detail::check(p, y);
    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
    double pos_rank_sum = 0.0, n_pos = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && p[order[j]] == p[order[i]]) ++j;
        const double rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k) {
            if (y[order[k]]) {
                pos_rank_sum += rank;
                n_pos += 1;
            }
        }
        i = j;
    }
    const double n_neg = static_cast<double>(p.size()) - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

/// Adjusted Rand index between two flat labelings of the same items.
inline double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) throw ValidationError("labelings differ in length");
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> ca, cb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        joint[{a[i], b[i]}] += 1;
        ca[a[i]] += 1;
        cb[b[i]] += 1;
    }
    auto c2 = [](double x) { return x * (x - 1) / 2; };
    double index = 0, sa = 0, sb = 0;
    for (const auto& [k, v] : joint) index += c2(v);
    for (const auto& [k, v] : ca) sa += c2(v);
    for (const auto& [k, v] : cb) sb += c2(v);
    const double expected = sa * sb / c2(static_cast<double>(a.size()));
    const double max_index = 0.5 * (sa + sb);
    if (max_index == expected) return 1.0;  // both trivial partitions
    return (index - expected) / (max_index - expected);
}

}  // namespace kt
