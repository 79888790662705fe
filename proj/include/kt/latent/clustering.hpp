#pragma once

#include <cmath>
#include <map>
#include <ostream>
#include <set>
#include <vector>

#include "kt/core/dataset.hpp"
#include "kt/ingest/csv.hpp"

namespace kt {

struct Merge {
    int left = 0;  // cluster ids: 0..n-1 are questions, n+i is the cluster made by merge i
    int right = 0;
    double height = 0.0;
    int size = 0;
};

struct QuestionClustering {
    std::vector<Id> questions;  // ascending raw ids
    std::vector<Merge> merges;  // non-decreasing heights
    std::map<Id, Id> assignment;  // question -> flat cluster id
    double c_max = 0.0;
    std::size_t n_clusters = 0;
};

struct ClusterParams {
    int min_co = 5;
    double target_cluster_size = 0.0;  // <= 0: mean number of distinct questions per quiz
};

/// Co-attempt counts between questions over the given rows (dense, ascending raw question id).
inline std::vector<std::vector<double>> co_attempt_counts(const Dataset& ds, std::span<const std::size_t> rows,
                                                          std::vector<Id>& questions) {
    std::map<Id, std::set<Id>> by_user;
    std::set<Id> qs;
    for (auto r : rows) {
        by_user[ds[r].user_id].insert(ds[r].question_id);
        qs.insert(ds[r].question_id);
    }
    questions.assign(qs.begin(), qs.end());
    const std::size_t n = questions.size();
    std::vector<std::vector<double>> co(n, std::vector<double>(n, 0.0));
    for (const auto& [u, set] : by_user) {
        std::vector<std::size_t> idx;
        for (Id q : set) idx.push_back(static_cast<std::size_t>(std::lower_bound(questions.begin(), questions.end(), q) - questions.begin()));
        for (std::size_t a = 0; a < idx.size(); ++a) {
            for (std::size_t b = a + 1; b < idx.size(); ++b) {
                co[idx[a]][idx[b]] += 1;
                co[idx[b]][idx[a]] += 1;
            }
        }
    }
    return co;
}

/// Average-linkage agglomeration over a symmetric distance matrix. Ties go to the pair whose
/// smallest member indices are lexicographically smallest.
inline std::vector<Merge> average_linkage(std::vector<std::vector<double>> d) {
    const int n = static_cast<int>(d.size());
    std::vector<Merge> merges;
    if (n < 2) return merges;
    std::vector<int> id(n), rep(n), size(n, 1);
    std::vector<bool> active(n, true);
    for (int i = 0; i < n; ++i) id[i] = rep[i] = i;

    auto less = [&](double da, int a1, int a2, double db, int b1, int b2) {
        if (da != db) return da < db;
        const auto ka = std::minmax(rep[a1], rep[a2]);
        const auto kb = std::minmax(rep[b1], rep[b2]);
        return ka < kb;
    };
    std::vector<int> best(n, -1);
    auto rescan = [&](int i) {
        best[i] = -1;
        for (int j = 0; j < n; ++j) {
            if (j == i || !active[j]) continue;
            if (best[i] < 0 || less(d[i][j], i, j, d[i][best[i]], i, best[i])) best[i] = j;
        }
    };
    for (int i = 0; i < n; ++i) rescan(i);

    for (int step = 0; step < n - 1; ++step) {
        int a = -1;
        for (int i = 0; i < n; ++i) {
            if (!active[i] || best[i] < 0) continue;
            if (a < 0 || less(d[i][best[i]], i, best[i], d[a][best[a]], a, best[a])) a = i;
        }
        int b = best[a];
        if (rep[b] < rep[a]) std::swap(a, b);  // survivor slot keeps the smaller representative
        merges.push_back({std::min(id[a], id[b]), std::max(id[a], id[b]), d[a][b], size[a] + size[b]});
        for (int k = 0; k < n; ++k) {
            if (!active[k] || k == a || k == b) continue;
            const double v = (size[a] * d[a][k] + size[b] * d[b][k]) / (size[a] + size[b]);
            d[a][k] = d[k][a] = v;
        }
        active[b] = false;
        size[a] += size[b];
        id[a] = n + step;
        for (int k = 0; k < n; ++k) {
            if (!active[k] || k == a) continue;
            if (best[k] == a || best[k] == b) {
                rescan(k);
            } else if (less(d[k][a], k, a, d[k][best[k]], k, best[k])) {
                best[k] = a;
            }
        }
        rescan(a);
    }
    return merges;
}

/// Flat labels after applying the first n - k merges; clusters numbered by their smallest member.
inline std::vector<int> cut_tree(std::size_t n, const std::vector<Merge>& merges, std::size_t k) {
    std::vector<int> parent(n + merges.size());
    for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = static_cast<int>(i);
    auto find = [&](int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    const std::size_t apply = n > k ? std::min(n - k, merges.size()) : 0;
    for (std::size_t m = 0; m < apply; ++m) {
        const int node = static_cast<int>(n + m);
        parent[find(merges[m].left)] = node;
        parent[find(merges[m].right)] = node;
    }
    std::vector<int> label(n, -1);
    std::map<int, int> numbering;
    for (std::size_t i = 0; i < n; ++i) {
        const int root = find(static_cast<int>(i));
        auto [it, fresh] = numbering.emplace(root, static_cast<int>(numbering.size()));
        label[i] = it->second;
    }
    return label;
}

inline double mean_quiz_size(const Dataset& ds, std::span<const std::size_t> rows) {
    std::map<Id, std::set<Id>> quiz;
    for (auto r : rows) quiz[ds[r].quiz_id].insert(ds[r].question_id);
    if (quiz.empty()) return 1.0;
    double s = 0.0;
    for (const auto& [k, v] : quiz) s += static_cast<double>(v.size());
    return s / static_cast<double>(quiz.size());
}

/// Distance C_max - co, with pairs below min_co treated as unconnected (distance C_max).
inline QuestionClustering cluster_questions(const Dataset& ds, std::span<const std::size_t> rows,
                                            const ClusterParams& p) {
    QuestionClustering c;
    auto co = co_attempt_counts(ds, rows, c.questions);
    const std::size_t n = c.questions.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i != j) c.c_max = std::max(c.c_max, co[i][j]);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            co[i][j] = i == j ? 0.0 : (co[i][j] < p.min_co ? c.c_max : c.c_max - co[i][j]);
        }
    }
    c.merges = average_linkage(std::move(co));
    const double target = p.target_cluster_size > 0 ? p.target_cluster_size : mean_quiz_size(ds, rows);
    const auto k = static_cast<std::size_t>(std::ceil(static_cast<double>(n) / std::max(target, 1.0)));
    c.n_clusters = n == 0 ? 0 : std::clamp<std::size_t>(k, 1, n);
    const auto labels = cut_tree(n, c.merges, c.n_clusters);
    for (std::size_t i = 0; i < n; ++i) c.assignment[c.questions[i]] = labels[i];
    return c;
}

inline void write_cluster_assignment(std::ostream& out, const QuestionClustering& c) {
    out << "question_id,cluster_id\n";
    for (const auto& [q, k] : c.assignment) out << q << ',' << k << '\n';
}

inline void write_dendrogram(std::ostream& out, const QuestionClustering& c) {
    out << "step,left,right,height,size\n";
    for (std::size_t i = 0; i < c.merges.size(); ++i) {
        const auto& m = c.merges[i];
        out << i << ',' << m.left << ',' << m.right << ',' << csv::format_double(m.height) << ',' << m.size << '\n';
    }
}

}  // namespace kt
