#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "kt/binary_io.hpp"
#include "kt/error.hpp"
#include "kt/features/features.hpp"
#include "kt/math.hpp"

namespace kt {

struct GbtParams {
    int n_trees = 200;
    int max_depth = 6;
    double learning_rate = 0.1;
    int min_leaf = 20;
    int n_bins = 256;
    double l2 = 1.0;
};

struct GbtNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;  // go left when value <= threshold
    int left = -1;
    int right = -1;
    double value = 0.0;  // Newton leaf value, leaves only
};

struct GbtTree {
    std::vector<GbtNode> nodes;

    double eval(std::span<const double> row) const {
        int i = 0;
        while (nodes[i].feature >= 0) {
            const auto& n = nodes[i];
            i = row[n.feature] <= n.threshold ? n.left : n.right;
        }
        return nodes[i].value;
    }
};

/// Boosted logistic-loss regression trees on quantile-binned features.
struct GbtModel {
    std::vector<GbtTree> trees;
    double learning_rate = 0.1;
    double base_score = 0.0;  // log-odds of the training prior
    std::size_t width = 0;
    bool degenerate = false;  // single-class training labels
    std::vector<double> train_loss;  // mean log-loss after each tree

    double margin(std::span<const double> row) const {
        if (row.size() != width) {
            throw ValidationError("gbt: row width " + std::to_string(row.size()) + " != model width " +
                                  std::to_string(width));
        }
        double sum = 0.0;
        for (const auto& t : trees) sum += t.eval(row);
        return base_score + learning_rate * sum;
    }

    double predict(std::span<const double> row) const { return clamp_probability(logistic(margin(row))); }

    std::vector<double> predict(const FeatureTable& table) const {
        if (table.width() != width) throw ValidationError("gbt: table width mismatch");
        std::vector<double> out(table.rows(), 0.0);
        for (std::size_t i = 0; i < table.rows(); ++i) out[i] = predict(table.row(i));
        return out;
    }

    /// Feature indices used by at least one split.
    std::vector<int> used_features() const {
        std::vector<int> used;
        for (const auto& t : trees) {
            for (const auto& n : t.nodes) {
                if (n.feature >= 0) used.push_back(n.feature);
            }
        }
        std::sort(used.begin(), used.end());
        used.erase(std::unique(used.begin(), used.end()), used.end());
        return used;
    }

    void encode(ByteWriter& w) const {
        w.put<double>(learning_rate);
        w.put<double>(base_score);
        w.put<std::uint64_t>(width);
        w.put<std::uint8_t>(degenerate);
        w.put_vector(train_loss);
        w.put<std::uint64_t>(trees.size());
        for (const auto& t : trees) {
            w.put<std::uint64_t>(t.nodes.size());
            for (const auto& n : t.nodes) {
                w.put<std::int32_t>(n.feature);
                w.put<double>(n.threshold);
                w.put<std::int32_t>(n.left);
                w.put<std::int32_t>(n.right);
                w.put<double>(n.value);
            }
        }
    }

    static GbtModel decode(ByteReader& r) {
        GbtModel m;
        m.learning_rate = r.get<double>();
        m.base_score = r.get<double>();
        m.width = r.get<std::uint64_t>();
        m.degenerate = r.get<std::uint8_t>() != 0;
        m.train_loss = r.get_vector<double>();
        m.trees.resize(r.get<std::uint64_t>());
        for (auto& t : m.trees) {
            t.nodes.resize(r.get<std::uint64_t>());
            for (auto& n : t.nodes) {
                n.feature = r.get<std::int32_t>();
                n.threshold = r.get<double>();
                n.left = r.get<std::int32_t>();
                n.right = r.get<std::int32_t>();
                n.value = r.get<double>();
            }
        }
        return m;
    }
};

namespace gbt_detail {

/// Candidate thresholds for one feature: observed values, max excluded.
inline std::vector<double> quantile_cuts(std::vector<double> values, int n_bins) {
    std::sort(values.begin(), values.end());
    std::vector<double> uniq;
    for (double v : values) {
        if (uniq.empty() || uniq.back() != v) uniq.push_back(v);
    }
    std::vector<double> cuts;
    if (uniq.size() <= 1) return cuts;
    if (uniq.size() <= static_cast<std::size_t>(n_bins)) {
        cuts.assign(uniq.begin(), uniq.end() - 1);
        return cuts;
    }
    const std::size_t n = values.size();
    for (int b = 1; b < n_bins; ++b) {
        const double v = values[std::min(n - 1, static_cast<std::size_t>(b) * n / static_cast<std::size_t>(n_bins))];
        if (v < uniq.back() && (cuts.empty() || cuts.back() < v)) cuts.push_back(v);
    }
    return cuts;
}

inline double mean_log_loss(std::span<const double> margin, std::span<const std::uint8_t> y) {
    double sum = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        // log(1 + e^-z) for y=1, log(1 + e^z) for y=0, in a stable form
        const double z = y[i] ? margin[i] : -margin[i];
        sum += z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
    }
    return sum / static_cast<double>(y.size());
}

struct SplitChoice {
    int feature = -1;
    int bin = -1;
    double gain = 0.0;
};

}  // namespace gbt_detail

inline GbtModel train_gbt(const FeatureTable& train, const GbtParams& params, std::uint64_t /*seed*/ = 0) {
    if (train.rows() == 0) throw ValidationError("gbt: empty training table");
    if (params.n_trees < 0 || params.max_depth < 1 || params.min_leaf < 1 || params.n_bins < 2 || params.l2 < 0 ||
        !(params.learning_rate > 0)) {
        throw ValidationError("gbt: invalid hyperparameters");
    }
    const std::size_t n = train.rows();
    const std::size_t d = train.width();

    GbtModel model;
    model.learning_rate = params.learning_rate;
    model.width = d;
    double positives = 0.0;
    for (auto y : train.labels) positives += y;
    const double rate = positives / static_cast<double>(n);
    model.base_score = logit(std::clamp(rate, 1e-6, 1.0 - 1e-6));
    if (positives == 0.0 || positives == static_cast<double>(n)) {
        model.degenerate = true;
        return model;
    }

    // Binned copy, column-major.
    std::vector<std::vector<double>> cuts(d);
    std::vector<std::vector<std::uint16_t>> bins(d, std::vector<std::uint16_t>(n));
    for (std::size_t f = 0; f < d; ++f) {
        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) col[i] = train.at(i, f);
        cuts[f] = gbt_detail::quantile_cuts(col, params.n_bins);
        for (std::size_t i = 0; i < n; ++i) {
            bins[f][i] = static_cast<std::uint16_t>(
                std::lower_bound(cuts[f].begin(), cuts[f].end(), col[i]) - cuts[f].begin());
        }
    }

    std::vector<double> margin(n, model.base_score);
    std::vector<double> grad(n), hess(n);
    const double lambda = params.l2;
    auto leaf_value = [lambda](double g, double h) { return -g / (h + lambda); };
    auto score = [lambda](double g, double h) { return g * g / (h + lambda); };

    struct Pending {
        int node;
        int depth;
        std::vector<std::uint32_t> rows;
        double g, h;
    };

    for (int t = 0; t < params.n_trees; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            const double p = logistic(margin[i]);
            grad[i] = p - train.labels[i];
            hess[i] = std::max(p * (1.0 - p), 1e-16);
        }
        GbtTree tree;
        std::vector<Pending> frontier;
        {
            Pending root{0, 0, std::vector<std::uint32_t>(n), 0.0, 0.0};
            for (std::size_t i = 0; i < n; ++i) {
                root.rows[i] = static_cast<std::uint32_t>(i);
                root.g += grad[i];
                root.h += hess[i];
            }
            tree.nodes.push_back({});
            frontier.push_back(std::move(root));
        }
        while (!frontier.empty()) {
            Pending cur = std::move(frontier.back());
            frontier.pop_back();
            auto& node = tree.nodes[cur.node];
            node.value = leaf_value(cur.g, cur.h);
            const auto count = cur.rows.size();
            if (cur.depth >= params.max_depth || count < 2 * static_cast<std::size_t>(params.min_leaf)) continue;

            gbt_detail::SplitChoice best;
            const double parent_score = score(cur.g, cur.h);
            std::vector<double> hg, hh;
            std::vector<std::uint32_t> hc;
            for (std::size_t f = 0; f < d; ++f) {
                const std::size_t nb = cuts[f].size() + 1;
                if (nb < 2) continue;
                hg.assign(nb, 0.0);
                hh.assign(nb, 0.0);
                hc.assign(nb, 0);
                const auto& col = bins[f];
                for (auto i : cur.rows) {
                    const auto b = col[i];
                    hg[b] += grad[i];
                    hh[b] += hess[i];
                    ++hc[b];
                }
                double gl = 0.0, hl = 0.0;
                std::size_t cl = 0;
                for (std::size_t b = 0; b + 1 < nb; ++b) {
                    gl += hg[b];
                    hl += hh[b];
                    cl += hc[b];
                    const std::size_t cr = count - cl;
                    if (cl < static_cast<std::size_t>(params.min_leaf)) continue;
                    if (cr < static_cast<std::size_t>(params.min_leaf)) break;
                    const double gain = score(gl, hl) + score(cur.g - gl, cur.h - hl) - parent_score;
                    if (gain > best.gain + 1e-12) best = {static_cast<int>(f), static_cast<int>(b), gain};
                }
            }
            if (best.feature < 0) continue;

            Pending left{static_cast<int>(tree.nodes.size()), cur.depth + 1, {}, 0.0, 0.0};
            Pending right{static_cast<int>(tree.nodes.size()) + 1, cur.depth + 1, {}, 0.0, 0.0};
            const auto& col = bins[best.feature];
            for (auto i : cur.rows) {
                auto& side = col[i] <= best.bin ? left : right;
                side.rows.push_back(i);
                side.g += grad[i];
                side.h += hess[i];
            }
            node.feature = best.feature;
            node.threshold = cuts[best.feature][best.bin];
            node.left = left.node;
            node.right = right.node;
            tree.nodes.push_back({});
            tree.nodes.push_back({});
            // right pushed first so the left subtree is expanded first
            frontier.push_back(std::move(right));
            frontier.push_back(std::move(left));
        }
        for (std::size_t i = 0; i < n; ++i) margin[i] += params.learning_rate * tree.eval(train.row(i));
        model.trees.push_back(std::move(tree));
        model.train_loss.push_back(gbt_detail::mean_log_loss(margin, train.labels));
    }
    return model;
}

}  // namespace kt
