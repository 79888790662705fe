#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "kt/models/artifact.hpp"
#include "kt/models/bayes_glm.hpp"
#include "kt/models/gbt.hpp"
#include "kt/models/knn.hpp"
#include "kt/models/model_spec.hpp"
#include "kt/models/naive_bayes.hpp"
#include "kt/parallel.hpp"

namespace kt {

using TabularVariant = std::variant<GbtModel, KnnModel, NaiveBayesModel, BayesGlmModel>;

/// One fitted view model. Predictions read only the view's feature columns.
struct TabularModel {
    ModelSpec spec;
    std::vector<int> columns;  // feature indices, in model input order
    TabularVariant model;

    double predict_view_row(std::span<const double> row) const {
        return std::visit([&](const auto& m) { return m.predict(row); }, model);
    }

    /// Scores every row of a table that contains at least the view's columns.
    std::vector<double> predict(const FeatureTable& table) const {
        std::vector<std::size_t> src;
        for (int f : columns) {
            auto it = std::find(table.columns.begin(), table.columns.end(), f);
            if (it == table.columns.end()) {
                throw ValidationError(spec.model_id + ": table lacks feature " + std::string(kFeatureNames[f]));
            }
            src.push_back(static_cast<std::size_t>(it - table.columns.begin()));
        }
        std::vector<double> out(table.rows());
        std::vector<double> buf(columns.size());
        for (std::size_t i = 0; i < table.rows(); ++i) {
            for (std::size_t j = 0; j < src.size(); ++j) buf[j] = table.at(i, src[j]);
            out[i] = predict_view_row(buf);
        }
        return out;
    }

    std::vector<std::uint8_t> payload() const {
        ByteWriter w;
        w.put_vector(columns);
        std::visit([&](const auto& m) { m.encode(w); }, model);
        return w.release();
    }

    std::vector<std::uint8_t> serialize() const { return encode_artifact(spec, payload()); }

    static TabularModel deserialize(std::span<const std::uint8_t> bytes) {
        auto art = decode_artifact(bytes);
        ByteReader r(art.payload);
        TabularModel t;
        t.spec = std::move(art.spec);
        t.columns = r.get_vector<int>();
        switch (t.spec.algorithm) {
            case Algorithm::gbt: t.model = GbtModel::decode(r); break;
            case Algorithm::knn: t.model = KnnModel::decode(r); break;
            case Algorithm::naive_bayes: t.model = NaiveBayesModel::decode(r); break;
            case Algorithm::bayes_glm: t.model = BayesGlmModel::decode(r); break;
            default: throw ValidationError(t.spec.model_id + " is not a tabular model");
        }
        if (!r.done()) throw ValidationError("trailing bytes in " + t.spec.model_id + " payload");
        return t;
    }

    /// Non-fatal training conditions worth surfacing.
    std::string warning() const {
        if (auto* g = std::get_if<GbtModel>(&model); g && g->degenerate) return "single-class labels, prior only";
        if (auto* n = std::get_if<NaiveBayesModel>(&model); n && n->degenerate) return "single-class labels, prior only";
        if (auto* b = std::get_if<BayesGlmModel>(&model); b && !b->converged) {
            return "not converged, gradient norm " + std::to_string(b->gradient_norm);
        }
        return {};
    }
};

inline GbtParams gbt_params(const ModelSpec& s) {
    return {s.int_param("n_trees"), s.int_param("max_depth"), s.param("learning_rate"),
            s.int_param("min_leaf"), s.int_param("n_bins"),   s.param("l2")};
}
inline KnnParams knn_params(const ModelSpec& s) {
    return {s.int_param("k"), static_cast<std::size_t>(s.param("max_reference"))};
}
inline BayesGlmParams bglm_params(const ModelSpec& s) {
    return {s.param("prior_variance"), s.param("tol"), s.int_param("max_iter")};
}

/// Fits one tabular spec on the spec's view of `train`.
inline TabularModel train_tabular(const ModelSpec& spec, const FeatureTable& train) {
    if (!is_tabular(spec.algorithm)) throw ValidationError(spec.model_id + " is not a tabular model");
    if (!spec.view) throw ValidationError(spec.model_id + ": tabular spec needs a view");
    const FeatureTable view = feature_view(train, *spec.view);
    TabularModel t;
    t.spec = spec;
    t.columns = view.columns;
    switch (spec.algorithm) {
        case Algorithm::gbt: t.model = train_gbt(view, gbt_params(spec), spec.seed); break;
        case Algorithm::knn: t.model = train_knn(view, knn_params(spec), spec.seed); break;
        case Algorithm::naive_bayes: t.model = train_nb(view); break;
        case Algorithm::bayes_glm: t.model = train_bglm(view, bglm_params(spec)); break;
        default: break;
    }
    return t;
}

struct TrainOutcome {
    ModelSpec spec;
    std::optional<TabularModel> model;  // empty when training failed
    std::string error;
    std::size_t rows = 0;
    double seconds = 0.0;
};

/// Trains every tabular spec on the training rows. Failures are isolated per spec.
inline std::vector<TrainOutcome> train_family(const FeatureTable& table, const std::vector<Split>& split,
                                              const std::vector<ModelSpec>& registry, int workers = 1) {
    if (split.size() != table.rows()) throw ValidationError("split labels do not align with the feature table");
    const auto train_rows = rows_with_split(split, Split::train);
    const FeatureTable train = table.select_rows(train_rows);
    std::vector<const ModelSpec*> specs;
    for (const auto& s : registry) {
        if (is_tabular(s.algorithm)) specs.push_back(&s);
    }
    std::vector<TrainOutcome> out(specs.size());
    parallel_for(specs.size(), workers, [&](std::size_t i) {
        auto& o = out[i];
        o.spec = *specs[i];
        o.rows = train.rows();
        const auto t0 = std::chrono::steady_clock::now();
        try {
            o.model = train_tabular(*specs[i], train);
        } catch (const std::exception& e) {
            o.error = e.what();
        }
        o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    });
    return out;
}

}  // namespace kt
