#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <queue>
#include <span>
#include <utility>
#include <vector>

#include "kt/binary_io.hpp"
#include "kt/error.hpp"
#include "kt/features/features.hpp"
#include "kt/math.hpp"
#include "kt/rng.hpp"

namespace kt {

struct KnnParams {
    int k = 100;
    std::size_t max_reference = 200000;  // larger training sets are subsampled (seeded)
};

struct Neighbor {
    double dist2;
    std::uint32_t index;
    friend bool operator<(const Neighbor& a, const Neighbor& b) {
        return a.dist2 != b.dist2 ? a.dist2 < b.dist2 : a.index < b.index;
    }
};

/// Exact k-nearest-neighbour search over a row-major point set.
class KdTree {
public:
    KdTree() = default;

    KdTree(const std::vector<double>* points, std::size_t dim) : points_(points), dim_(dim) {
        const std::size_t n = dim == 0 ? 0 : points->size() / dim;
        order_.resize(n);
        std::iota(order_.begin(), order_.end(), 0u);
        if (n > 0) build(0, n);
    }

    std::vector<Neighbor> nearest(std::span<const double> q, std::size_t k) const {
        std::priority_queue<Neighbor> heap;  // max-heap on (dist2, index)
        if (k > 0 && !nodes_.empty()) search(0, q, k, heap);
        std::vector<Neighbor> out(heap.size());
        for (std::size_t i = out.size(); i-- > 0;) {
            out[i] = heap.top();
            heap.pop();
        }
        return out;
    }

private:
    static constexpr std::size_t kLeafSize = 16;

    struct Node {
        std::uint32_t begin, end;
        int dim = -1;  // -1 for leaves
        double split = 0.0;
        int left = -1, right = -1;
    };

    double coord(std::uint32_t i, std::size_t d) const { return (*points_)[i * dim_ + d]; }

    int build(std::size_t begin, std::size_t end) {
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back({static_cast<std::uint32_t>(begin), static_cast<std::uint32_t>(end)});
        if (end - begin <= kLeafSize) return id;
        std::size_t best_dim = 0;
        double best_spread = -1.0;
        for (std::size_t d = 0; d < dim_; ++d) {
            double lo = coord(order_[begin], d), hi = lo;
            for (std::size_t i = begin + 1; i < end; ++i) {
                lo = std::min(lo, coord(order_[i], d));
                hi = std::max(hi, coord(order_[i], d));
            }
            if (hi - lo > best_spread) {
                best_spread = hi - lo;
                best_dim = d;
            }
        }
        if (best_spread <= 0.0) return id;  // all points identical
        const std::size_t mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](std::uint32_t a, std::uint32_t b) {
                             const double ca = coord(a, best_dim), cb = coord(b, best_dim);
                             return ca != cb ? ca < cb : a < b;
                         });
        // left: coordinate <= split, right: coordinate >= split
        const double split = coord(order_[mid], best_dim);
        nodes_[id].dim = static_cast<int>(best_dim);
        nodes_[id].split = split;
        const int l = build(begin, mid);
        const int r = build(mid, end);
        nodes_[id].left = l;
        nodes_[id].right = r;
        return id;
    }

    double distance2(std::uint32_t i, std::span<const double> q) const {
        double s = 0.0;
        for (std::size_t d = 0; d < dim_; ++d) {
            const double diff = q[d] - coord(i, d);
            s += diff * diff;
        }
        return s;
    }

    void search(int id, std::span<const double> q, std::size_t k, std::priority_queue<Neighbor>& heap) const {
        const Node& n = nodes_[id];
        if (n.dim < 0) {
            for (std::uint32_t p = n.begin; p < n.end; ++p) {
                const Neighbor cand{distance2(order_[p], q), order_[p]};
                if (heap.size() < k) {
                    heap.push(cand);
                } else if (cand < heap.top()) {
                    heap.pop();
                    heap.push(cand);
                }
            }
            return;
        }
        const double diff = q[n.dim] - n.split;
        const int near = diff <= 0 ? n.left : n.right;
        const int far = diff <= 0 ? n.right : n.left;
        search(near, q, k, heap);
        // prune only when strictly farther, so equal-distance lower indices are still found
        if (heap.size() < k || diff * diff <= heap.top().dist2) search(far, q, k, heap);
    }

    const std::vector<double>* points_ = nullptr;
    std::size_t dim_ = 0;
    std::vector<std::uint32_t> order_;
    std::vector<Node> nodes_;
};

/// Laplace-corrected k-NN vote on standardized features.
struct KnnModel {
    int k = 100;
    std::size_t width = 0;              // input width
    std::vector<int> kept;              // input columns with nonzero variance
    std::vector<int> dropped;           // zero-variance input columns
    std::vector<double> mean, sd;       // per kept column
    std::vector<double> reference;      // standardized, row-major, kept columns only
    std::vector<std::uint8_t> labels;
    std::vector<std::uint32_t> source_rows;  // training-row index of each reference row
    std::size_t training_rows = 0;
    KdTree index;

    KnnModel() = default;
    KnnModel(const KnnModel& o) { *this = o; }
    KnnModel& operator=(const KnnModel& o) {
        if (this != &o) {
            k = o.k;
            width = o.width;
            kept = o.kept;
            dropped = o.dropped;
            mean = o.mean;
            sd = o.sd;
            reference = o.reference;
            labels = o.labels;
            source_rows = o.source_rows;
            training_rows = o.training_rows;
            rebuild_index();
        }
        return *this;
    }
    KnnModel(KnnModel&& o) noexcept { *this = std::move(o); }
    KnnModel& operator=(KnnModel&& o) noexcept {
        if (this != &o) {
            k = o.k;
            width = o.width;
            kept = std::move(o.kept);
            dropped = std::move(o.dropped);
            mean = std::move(o.mean);
            sd = std::move(o.sd);
            reference = std::move(o.reference);
            labels = std::move(o.labels);
            source_rows = std::move(o.source_rows);
            training_rows = o.training_rows;
            rebuild_index();
        }
        return *this;
    }

    std::size_t reference_size() const { return labels.size(); }

    void rebuild_index() { index = KdTree(&reference, kept.size()); }

    std::vector<double> standardize(std::span<const double> row) const {
        if (row.size() != width) {
            throw ValidationError("knn: row width " + std::to_string(row.size()) + " != model width " +
                                  std::to_string(width));
        }
        std::vector<double> z(kept.size());
        for (std::size_t j = 0; j < kept.size(); ++j) z[j] = (row[kept[j]] - mean[j]) / sd[j];
        return z;
    }

    std::vector<Neighbor> neighbors(std::span<const double> row) const {
        if (kept.empty()) {
            // every column constant: all references tie, lowest indices win
            std::vector<Neighbor> out;
            for (std::size_t i = 0; i < std::min<std::size_t>(k, reference_size()); ++i) {
                out.push_back({0.0, static_cast<std::uint32_t>(i)});
            }
            (void)standardize(row);
            return out;
        }
        return index.nearest(standardize(row), static_cast<std::size_t>(k));
    }

    double predict(std::span<const double> row) const {
        const auto nn = neighbors(row);
        double c = 0.0;
        for (const auto& n : nn) c += labels[n.index];
        return clamp_probability((c + 1.0) / (static_cast<double>(nn.size()) + 2.0));
    }

    std::vector<double> predict(const FeatureTable& table) const {
        std::vector<double> out(table.rows());
        for (std::size_t i = 0; i < table.rows(); ++i) out[i] = predict(table.row(i));
        return out;
    }

    void encode(ByteWriter& w) const {
        w.put<std::int32_t>(k);
        w.put<std::uint64_t>(width);
        w.put<std::uint64_t>(training_rows);
        w.put_vector(kept);
        w.put_vector(dropped);
        w.put_vector(mean);
        w.put_vector(sd);
        w.put_vector(reference);
        w.put_vector(labels);
        w.put_vector(source_rows);
    }

    static KnnModel decode(ByteReader& r) {
        KnnModel m;
        m.k = r.get<std::int32_t>();
        m.width = r.get<std::uint64_t>();
        m.training_rows = r.get<std::uint64_t>();
        m.kept = r.get_vector<int>();
        m.dropped = r.get_vector<int>();
        m.mean = r.get_vector<double>();
        m.sd = r.get_vector<double>();
        m.reference = r.get_vector<double>();
        m.labels = r.get_vector<std::uint8_t>();
        m.source_rows = r.get_vector<std::uint32_t>();
        m.rebuild_index();
        return m;
    }
};

inline KnnModel train_knn(const FeatureTable& train, const KnnParams& params, std::uint64_t seed = 0) {
    if (train.rows() == 0) throw ValidationError("knn: empty reference set");
    if (params.k < 1) throw ValidationError("knn: k must be >= 1");
    if (params.max_reference < 1) throw ValidationError("knn: max_reference must be >= 1");

    std::vector<std::uint32_t> rows(train.rows());
    std::iota(rows.begin(), rows.end(), 0u);
    if (rows.size() > params.max_reference) {
        Rng rng(hash_combine(seed, 0x6b6e6eULL));
        rng.shuffle(rows.begin(), rows.end());
        rows.resize(params.max_reference);
        std::sort(rows.begin(), rows.end());
    }
    if (static_cast<std::size_t>(params.k) > rows.size()) {
        throw ValidationError("knn: k=" + std::to_string(params.k) + " exceeds reference size " +
                              std::to_string(rows.size()));
    }

    KnnModel m;
    m.k = params.k;
    m.width = train.width();
    m.training_rows = train.rows();
    m.source_rows = rows;
    const double n = static_cast<double>(rows.size());
    for (std::size_t f = 0; f < train.width(); ++f) {
        double mu = 0.0;
        for (auto i : rows) mu += train.at(i, f);
        mu /= n;
        double var = 0.0;
        for (auto i : rows) var += (train.at(i, f) - mu) * (train.at(i, f) - mu);
        const double sd = std::sqrt(var / n);
        if (sd > 1e-12) {
            m.kept.push_back(static_cast<int>(f));
            m.mean.push_back(mu);
            m.sd.push_back(sd);
        } else {
            m.dropped.push_back(static_cast<int>(f));
        }
    }
    m.reference.reserve(rows.size() * m.kept.size());
    for (auto i : rows) {
        for (std::size_t j = 0; j < m.kept.size(); ++j) {
            m.reference.push_back((train.at(i, m.kept[j]) - m.mean[j]) / m.sd[j]);
        }
        m.labels.push_back(train.labels[i]);
    }
    m.rebuild_index();
    return m;
}

}  // namespace kt
