#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "kt/core/dataset.hpp"
#include "kt/ingest/csv.hpp"
#include "kt/math.hpp"

namespace kt {

/// Rows = scored interactions, columns = models in registry order. NaN marks MISSING.
struct PredictionMatrix {
    std::vector<Id> answer_ids;
    std::vector<std::string> model_ids;
    std::vector<double> p;             // row-major
    std::vector<std::uint8_t> native;  // 1 when the model scored the row without a fallback

    PredictionMatrix() = default;
    PredictionMatrix(std::vector<Id> answers, std::vector<std::string> models)
        : answer_ids(std::move(answers)),
          model_ids(std::move(models)),
          p(answer_ids.size() * model_ids.size(), std::numeric_limits<double>::quiet_NaN()),
          native(p.size(), 0) {}

    std::size_t rows() const { return answer_ids.size(); }
    std::size_t cols() const { return model_ids.size(); }
    double at(std::size_t r, std::size_t m) const { return p[r * cols() + m]; }
    bool missing(std::size_t r, std::size_t m) const { return std::isnan(at(r, m)); }

    void set_column(std::size_t m, std::span<const double> probs, std::span<const std::uint8_t> nat) {
        for (std::size_t r = 0; r < rows(); ++r) {
            p[r * cols() + m] = clamp_probability(probs[r]);
            native[r * cols() + m] = nat[r];
        }
    }

    std::vector<double> column(std::size_t m) const {
        std::vector<double> out(rows());
        for (std::size_t r = 0; r < rows(); ++r) out[r] = at(r, m);
        return out;
    }
};

struct WeightFitParams {
    int iters = 500;
    double lr = 0.5;
};

struct EnsembleWeights {
    std::vector<std::string> model_ids;
    std::vector<double> w;
    std::vector<double> trace;  // mean validation log-loss; [0] at uniform weights
    std::size_t excluded_rows = 0;
    double base_rate = 0.5;
    std::string selected;  // "eg" or the model id of a winning one-hot vertex
};

namespace ensemble_detail {

struct Mixed {
    double p = 0.0;
    bool any = false;
};

inline Mixed mix(const PredictionMatrix& X, std::size_t r, std::span<const double> w) {
    double num = 0.0, den = 0.0;
    for (std::size_t m = 0; m < X.cols(); ++m) {
        if (X.missing(r, m)) continue;
        num += w[m] * X.at(r, m);
        den += w[m];
    }
    if (den <= 0.0) return {};
    return {clamp_probability(num / den), true};
}

inline double mean_log_loss(const PredictionMatrix& X, std::span<const int> y, std::span<const std::size_t> rows,
                            std::span<const double> w) {
    double s = 0.0;
    for (auto r : rows) {
        const double p = mix(X, r, w).p;
        s -= y[r] ? std::log(p) : std::log1p(-p);
    }
    return s / static_cast<double>(rows.size());
}

}  // namespace ensemble_detail

/// Exponentiated-gradient descent on the simplex from uniform weights. A step that
/// would raise the loss is retried with half the rate, so the trace never increases.
/// One-hot vertices are feasible points; if one beats the iterate it is returned.
inline EnsembleWeights fit_weights(const PredictionMatrix& X, std::span<const int> labels,
                                   const WeightFitParams& prm = {}) {
    if (labels.size() != X.rows()) throw ValidationError("labels do not align with the prediction matrix");
    if (X.cols() == 0) throw ValidationError("no models to weight");
    EnsembleWeights out;
    out.model_ids = X.model_ids;
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < X.rows(); ++r) {
        bool any = false;
        for (std::size_t m = 0; m < X.cols() && !any; ++m) any = !X.missing(r, m);
        if (any) {
            rows.push_back(r);
        } else {
            ++out.excluded_rows;
        }
    }
    double positives = 0.0;
    for (auto r : rows) positives += labels[r];
    if (rows.size() < 100 || positives == 0.0 || positives == static_cast<double>(rows.size())) {
        throw ValidationError("weight fitting needs >= 100 scored rows with both classes (got " +
                              std::to_string(rows.size()) + ")");
    }
    out.base_rate = clamp_probability(positives / static_cast<double>(rows.size()));

    const std::size_t M = X.cols();
    std::vector<double> w(M, 1.0 / static_cast<double>(M));
    double loss = ensemble_detail::mean_log_loss(X, labels, rows, w);
    out.trace.push_back(loss);
    std::vector<double> g(M);
    for (int it = 0; it < prm.iters; ++it) {
        std::fill(g.begin(), g.end(), 0.0);
        for (auto r : rows) {
            double num = 0.0, den = 0.0;
            for (std::size_t m = 0; m < M; ++m) {
                if (X.missing(r, m)) continue;
                num += w[m] * X.at(r, m);
                den += w[m];
            }
            const double p = clamp_probability(num / den);
            const double dl = labels[r] ? -1.0 / p : 1.0 / (1.0 - p);
            for (std::size_t m = 0; m < M; ++m) {
                if (!X.missing(r, m)) g[m] += dl * (X.at(r, m) - p) / den;
            }
        }
        for (auto& v : g) v /= static_cast<double>(rows.size());
        bool moved = false;
        for (double lr = prm.lr; lr > 1e-10; lr *= 0.5) {
            std::vector<double> next(M);
            double z = 0.0;
            const double shift = *std::min_element(g.begin(), g.end());  // keeps exp() in range
            for (std::size_t m = 0; m < M; ++m) z += next[m] = w[m] * std::exp(-lr * (g[m] - shift));
            for (auto& v : next) v /= z;
            const double l = ensemble_detail::mean_log_loss(X, labels, rows, next);
            if (l <= loss) {
                moved = l < loss;
                w = std::move(next);
                loss = l;
                break;
            }
        }
        out.trace.push_back(loss);
        if (!moved) break;
    }
    out.selected = "eg";
    for (std::size_t m = 0; m < M; ++m) {
        std::vector<double> e(M, 0.0);
        e[m] = 1.0;
        bool covers = true;
        for (auto r : rows) covers = covers && !X.missing(r, m);
        if (!covers) continue;
        const double l = ensemble_detail::mean_log_loss(X, labels, rows, e);
        if (l < loss) {
            loss = l;
            w = e;
            out.selected = X.model_ids[m];
        }
    }
    if (out.selected != "eg") out.trace.push_back(loss);
    out.w = std::move(w);
    return out;
}

struct EnsemblePrediction {
    double p = 0.5;
    bool fallback = false;  // no model available on the row
};

inline EnsemblePrediction predict_ensemble(const EnsembleWeights& W, const PredictionMatrix& X, std::size_t r) {
    if (W.model_ids != X.model_ids) throw ValidationError("ensemble weights and prediction matrix disagree on models");
    const auto m = ensemble_detail::mix(X, r, W.w);
    if (!m.any) return {W.base_rate, true};
    return {m.p, false};
}

inline void write_weights_csv(std::ostream& out, const EnsembleWeights& W) {
    out << "model_id,weight\n";
    for (std::size_t m = 0; m < W.w.size(); ++m) out << W.model_ids[m] << ',' << csv::format_double(W.w[m]) << '\n';
}

inline EnsembleWeights read_weights_csv(std::istream& in) {
    EnsembleWeights W;
    std::string line;
    if (!std::getline(in, line) || line != "model_id,weight") throw SchemaError("weights CSV: bad header");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw SchemaError("weights CSV: malformed line '" + line + "'");
        W.model_ids.push_back(line.substr(0, comma));
        W.w.push_back(std::stod(line.substr(comma + 1)));
    }
    return W;
}

inline void write_predictions_csv(std::ostream& out, std::span<const Id> answer_ids, std::span<const double> p) {
    out << "answer_id,p_correct,predicted_label\n";
    for (std::size_t i = 0; i < p.size(); ++i) {
        out << answer_ids[i] << ',' << csv::format_double(p[i]) << ',' << (p[i] >= 0.5 ? 1 : 0) << '\n';
    }
}

/// answer_id, then one probability column per model (empty = MISSING) and a
/// matching `<model_id>:native` 0/1 column.
inline void write_prediction_matrix(std::ostream& out, const PredictionMatrix& X) {
    out << "answer_id";
    for (const auto& id : X.model_ids) out << ',' << id << ',' << id << ":native";
    out << '\n';
    for (std::size_t r = 0; r < X.rows(); ++r) {
        out << X.answer_ids[r];
        for (std::size_t m = 0; m < X.cols(); ++m) {
            out << ',';
            if (!X.missing(r, m)) out << csv::format_double(X.at(r, m));
            out << ',' << int(X.native[r * X.cols() + m]);
        }
        out << '\n';
    }
}

inline PredictionMatrix read_prediction_matrix(std::istream& in) {
    csv::Reader reader(in);
    std::vector<std::string> row;
    if (!reader.next(row) || row.empty() || row[0] != "answer_id" || row.size() % 2 != 1) {
        throw SchemaError("prediction matrix: bad header");
    }
    std::vector<std::string> ids;
    for (std::size_t c = 1; c < row.size(); c += 2) {
        if (row[c + 1] != row[c] + ":native") throw SchemaError("prediction matrix: column " + row[c] + " lacks :native");
        ids.push_back(row[c]);
    }
    std::vector<Id> answers;
    std::vector<double> p;
    std::vector<std::uint8_t> native;
    while (reader.next(row)) {
        if (row.size() == 1 && row[0].empty()) continue;
        if (row.size() != 1 + 2 * ids.size()) throw SchemaError("prediction matrix: ragged row " + std::to_string(reader.record()));
        auto a = csv::parse_number<Id>(row[0]);
        if (!a) throw SchemaError("prediction matrix: bad answer_id at record " + std::to_string(reader.record()));
        answers.push_back(*a);
        for (std::size_t m = 0; m < ids.size(); ++m) {
            const auto& cell = row[1 + 2 * m];
            if (cell.empty()) {
                p.push_back(std::numeric_limits<double>::quiet_NaN());
            } else {
                auto v = csv::parse_number<double>(cell);
                if (!v) throw SchemaError("prediction matrix: bad probability at record " + std::to_string(reader.record()));
                p.push_back(*v);
            }
            native.push_back(row[2 + 2 * m] == "1");
        }
    }
    PredictionMatrix X(std::move(answers), std::move(ids));
    X.p = std::move(p);
    X.native = std::move(native);
    return X;
}

}  // namespace kt
