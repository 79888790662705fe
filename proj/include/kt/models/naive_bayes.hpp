#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "kt/binary_io.hpp"
#include "kt/error.hpp"
#include "kt/features/features.hpp"
#include "kt/math.hpp"

namespace kt {

inline constexpr double kVarianceFloor = 1e-6;

/// Gaussian naive Bayes, evaluated in log space.
struct NaiveBayesModel {
    std::size_t width = 0;
    std::array<double, 2> prior{0.5, 0.5};
    std::array<std::vector<double>, 2> mean, var;
    bool degenerate = false;  // one class absent from training

    double log_joint(std::span<const double> row, int c) const {
        double s = std::log(prior[c]);
        for (std::size_t f = 0; f < width; ++f) {
            const double d = row[f] - mean[c][f];
            s += -0.5 * std::log(2.0 * std::numbers::pi * var[c][f]) - d * d / (2.0 * var[c][f]);
        }
        return s;
    }

    double predict(std::span<const double> row) const {
        if (row.size() != width) {
            throw ValidationError("naive_bayes: row width " + std::to_string(row.size()) + " != model width " +
                                  std::to_string(width));
        }
        if (degenerate) return clamp_probability(prior[1]);
        return clamp_probability(logistic(log_joint(row, 1) - log_joint(row, 0)));
    }

    std::vector<double> predict(const FeatureTable& table) const {
        std::vector<double> out(table.rows());
        for (std::size_t i = 0; i < table.rows(); ++i) out[i] = predict(table.row(i));
        return out;
    }

    void encode(ByteWriter& w) const {
        w.put<std::uint64_t>(width);
        w.put<std::uint8_t>(degenerate);
        for (int c = 0; c < 2; ++c) {
            w.put<double>(prior[c]);
            w.put_vector(mean[c]);
            w.put_vector(var[c]);
        }
    }

    static NaiveBayesModel decode(ByteReader& r) {
        NaiveBayesModel m;
        m.width = r.get<std::uint64_t>();
        m.degenerate = r.get<std::uint8_t>() != 0;
        for (int c = 0; c < 2; ++c) {
            m.prior[c] = r.get<double>();
            m.mean[c] = r.get_vector<double>();
            m.var[c] = r.get_vector<double>();
        }
        return m;
    }
};

inline NaiveBayesModel train_nb(const FeatureTable& train) {
    if (train.rows() == 0) throw ValidationError("naive_bayes: empty training table");
    NaiveBayesModel m;
    m.width = train.width();
    std::array<double, 2> count{0.0, 0.0};
    for (int c = 0; c < 2; ++c) {
        m.mean[c].assign(m.width, 0.0);
        m.var[c].assign(m.width, 0.0);
    }
    for (std::size_t i = 0; i < train.rows(); ++i) {
        const int c = train.labels[i];
        count[c] += 1.0;
        for (std::size_t f = 0; f < m.width; ++f) m.mean[c][f] += train.at(i, f);
    }
    for (int c = 0; c < 2; ++c) {
        if (count[c] > 0) {
            for (auto& v : m.mean[c]) v /= count[c];
        }
    }
    for (std::size_t i = 0; i < train.rows(); ++i) {
        const int c = train.labels[i];
        for (std::size_t f = 0; f < m.width; ++f) {
            const double d = train.at(i, f) - m.mean[c][f];
            m.var[c][f] += d * d;
        }
    }
    for (int c = 0; c < 2; ++c) {
        for (auto& v : m.var[c]) v = std::max(count[c] > 0 ? v / count[c] : 0.0, kVarianceFloor);
    }
    const double n = count[0] + count[1];
    m.prior = {count[0] / n, count[1] / n};
    m.degenerate = count[0] == 0 || count[1] == 0;
    return m;
}

}  // namespace kt
