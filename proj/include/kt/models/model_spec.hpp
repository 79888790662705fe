#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kt/error.hpp"
#include "kt/features/features.hpp"
#include "kt/rng.hpp"

namespace kt {

enum class Algorithm : std::uint8_t { gbt, knn, naive_bayes, bayes_glm, attention_kt, skill_cf, irt_quiz, irt_clustered };

inline const char* algorithm_name(Algorithm a) {
    switch (a) {
        case Algorithm::gbt: return "gbt";
        case Algorithm::knn: return "knn";
        case Algorithm::naive_bayes: return "naive_bayes";
        case Algorithm::bayes_glm: return "bayes_glm";
        case Algorithm::attention_kt: return "attention_kt";
        case Algorithm::skill_cf: return "skill_cf";
        case Algorithm::irt_quiz: return "irt_quiz";
        case Algorithm::irt_clustered: return "irt_clustered";
    }
    return "?";
}

inline Algorithm parse_algorithm(std::string_view s) {
    for (int i = 0; i <= static_cast<int>(Algorithm::irt_clustered); ++i) {
        if (s == algorithm_name(static_cast<Algorithm>(i))) return static_cast<Algorithm>(i);
    }
    throw ValidationError("unknown algorithm '" + std::string(s) + "'");
}

inline bool is_tabular(Algorithm a) {
    return a == Algorithm::gbt || a == Algorithm::knn || a == Algorithm::naive_bayes || a == Algorithm::bayes_glm;
}

using Hyperparameters = std::map<std::string, double>;

struct ModelSpec {
    std::string model_id;
    Algorithm algorithm = Algorithm::gbt;
    std::optional<Granularity> view;  // tabular models only
    Hyperparameters hyperparameters;
    std::uint64_t seed = 0;

    double param(const std::string& key) const {
        auto it = hyperparameters.find(key);
        if (it == hyperparameters.end()) throw ValidationError(model_id + ": no hyperparameter '" + key + "'");
        return it->second;
    }
    int int_param(const std::string& key) const { return static_cast<int>(param(key)); }

    /// Replaces a known hyperparameter; unknown keys are rejected.
    void set(const std::string& key, double value) {
        auto it = hyperparameters.find(key);
        if (it == hyperparameters.end()) {
            std::string known;
            for (const auto& [k, _] : hyperparameters) known += (known.empty() ? "" : ", ") + k;
            throw ValidationError(model_id + ": unknown hyperparameter '" + key + "' (known: " +
                                  (known.empty() ? "none" : known) + ")");
        }
        it->second = value;
    }
};

inline Hyperparameters default_hyperparameters(Algorithm a) {
    switch (a) {
        case Algorithm::gbt:
            return {{"n_trees", 200}, {"max_depth", 6}, {"learning_rate", 0.1},
                    {"min_leaf", 20}, {"n_bins", 256},  {"l2", 1.0}};
        case Algorithm::knn: return {{"k", 100}, {"max_reference", 200000}};
        case Algorithm::naive_bayes: return {};
        case Algorithm::bayes_glm: return {{"prior_variance", 1.0}, {"tol", 1e-6}, {"max_iter", 500}};
        case Algorithm::attention_kt:
            return {{"d_model", 64},   {"n_heads", 4},   {"n_blocks", 2},     {"d_ff", 256},
                    {"max_seq_len", 64}, {"mask_prob", 0.2}, {"dropout", 0.0}, {"batch_size", 16},
                    {"lr", 1e-4},      {"max_steps", 1500}, {"eval_every", 100}, {"patience", 3}};
        case Algorithm::skill_cf:
            return {{"k", 16}, {"lambda", 0.1}, {"iters", 50}, {"bypass_total", 20}};
        case Algorithm::irt_quiz: return {{"tol", 1e-5}, {"max_iter", 200}};
        case Algorithm::irt_clustered:
            return {{"tol", 1e-5}, {"max_iter", 200}, {"min_co", 5}, {"target_cluster_size", 0}};
    }
    return {};
}

/// Stable per-model seed derived from the run seed and the model id.
inline std::uint64_t model_seed(std::uint64_t run_seed, std::string_view model_id) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : model_id) h = (h ^ c) * 0x100000001b3ULL;
    return hash_combine(run_seed, h);
}

inline const char* algorithm_prefix(Algorithm a) {
    switch (a) {
        case Algorithm::naive_bayes: return "nb";
        case Algorithm::bayes_glm: return "bglm";
        default: return algorithm_name(a);
    }
}

/// The 22 ensemble members in fixed order: 16 view models, 2 full-view models,
/// the attention model and the 3 latent models.
inline std::vector<ModelSpec> default_registry(std::uint64_t run_seed = 1) {
    std::vector<ModelSpec> out;
    auto add = [&](std::string id, Algorithm a, std::optional<Granularity> view) {
        ModelSpec s{id, a, view, default_hyperparameters(a), model_seed(run_seed, id)};
        out.push_back(std::move(s));
    };
    for (Algorithm a : {Algorithm::gbt, Algorithm::knn, Algorithm::naive_bayes, Algorithm::bayes_glm}) {
        for (Granularity g : {Granularity::question, Granularity::user, Granularity::group, Granularity::quiz}) {
            add(std::string(algorithm_prefix(a)) + "-" + granularity_name(g), a, g);
        }
    }
    add("gbt-full", Algorithm::gbt, Granularity::full);
    add("knn-full", Algorithm::knn, Granularity::full);
    add("attention-kt", Algorithm::attention_kt, std::nullopt);
    add("skill-cf", Algorithm::skill_cf, std::nullopt);
    add("irt-quiz", Algorithm::irt_quiz, std::nullopt);
    add("irt-clustered", Algorithm::irt_clustered, std::nullopt);
    return out;
}

inline const ModelSpec* find_spec(const std::vector<ModelSpec>& registry, std::string_view id) {
    for (const auto& s : registry) {
        if (s.model_id == id) return &s;
    }
    return nullptr;
}

inline ModelSpec& require_spec(std::vector<ModelSpec>& registry, std::string_view id) {
    for (auto& s : registry) {
        if (s.model_id == id) return s;
    }
    throw ValidationError("unknown model_id '" + std::string(id) + "'");
}

}  // namespace kt
