#pragma once

#include <chrono>
#include <cstdio>
#include <json.hpp>
#include <ostream>

#include "kt/ensemble/ensemble.hpp"
#include "kt/eval/metrics.hpp"
#include "kt/pipeline/members.hpp"

namespace kt {

struct MetricReport {
    std::string model_id;
    std::string split;
    std::string status = "ok";
    double accuracy = 0.0;
    double log_loss = 0.0;
    std::optional<double> auc;
    std::size_t n = 0;
    double coverage = 0.0;  // fraction of rows scored without a fallback
    std::optional<double> weight;
};

inline MetricReport score_predictions(std::string model_id, std::string split, std::span<const double> p,
                                      std::span<const std::uint8_t> native, std::span<const int> y) {
    MetricReport r;
    r.model_id = std::move(model_id);
    r.split = std::move(split);
    r.accuracy = accuracy(p, y);
    r.log_loss = log_loss(p, y);
    r.auc = auc(p, y);
    r.n = p.size();
    double nat = 0.0;
    for (auto v : native) nat += v;
    r.coverage = nat / static_cast<double>(p.size());
    return r;
}

struct MemberOutcome {
    ModelSpec spec;
    std::optional<FittedMember> member;
    std::string error;
    std::size_t rows = 0;
    double seconds = 0.0;
};

/// Trains every registry member; a failing member is recorded and the rest continue.
inline std::vector<MemberOutcome> train_members(const PipelineContext& ctx, const std::vector<ModelSpec>& registry,
                                                int workers) {
    std::vector<MemberOutcome> out(registry.size());
    const auto n_train = ctx.rows(Split::train).size();
    PipelineContext inner = ctx;
    inner.workers = 1;
    parallel_for(registry.size(), workers, [&](std::size_t i) {
        auto& o = out[i];
        o.spec = registry[i];
        o.rows = n_train;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            o.member = train_member(registry[i], inner);
        } catch (const std::exception& e) {
            o.error = e.what();
        }
        o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    });
    return out;
}

/// One column per registry member, in registry order. Failed members stay MISSING.
inline PredictionMatrix collect_predictions(std::vector<MemberOutcome>& members, const PipelineContext& ctx,
                                            std::span<const std::size_t> rows, int workers = 1) {
    std::vector<Id> answers;
    for (auto r : rows) answers.push_back(ctx.ds()[r].answer_id);
    std::vector<std::string> ids;
    for (const auto& m : members) ids.push_back(m.spec.model_id);
    PredictionMatrix X(std::move(answers), std::move(ids));
    std::vector<MemberScores> scores(members.size());
    parallel_for(members.size(), workers, [&](std::size_t m) {
        if (members[m].member) scores[m] = predict_member(*members[m].member, ctx, rows);
    });
    for (std::size_t m = 0; m < members.size(); ++m) {
        if (members[m].member) X.set_column(m, scores[m].p, scores[m].native);
    }
    return X;
}

inline std::vector<int> labels_of(const Dataset& ds, std::span<const std::size_t> rows) {
    std::vector<int> y;
    for (auto r : rows) y.push_back(ds[r].is_correct);
    return y;
}

struct ExperimentReport {
    std::vector<MetricReport> rows;  // per member and split, then the ensemble
    EnsembleWeights weights;
    std::vector<std::string> warnings;
    std::size_t members_ok = 0;
};

/// Scores every member column and the weighted ensemble on both the weight-fitting and test sets.
inline ExperimentReport build_report(const std::vector<std::string>& member_errors, const PredictionMatrix& val,
                                     std::span<const int> y_val, const PredictionMatrix& test,
                                     std::span<const int> y_test, const EnsembleWeights& weights) {
    ExperimentReport rep;
    rep.weights = weights;
    for (std::size_t m = 0; m < val.cols(); ++m) {
        const auto& id = val.model_ids[m];
        if (!member_errors[m].empty()) {
            rep.warnings.push_back("model " + id + " failed and is excluded from the ensemble: " + member_errors[m]);
            for (const char* split : {"validation", "test"}) {
                MetricReport r;
                r.model_id = id;
                r.split = split;
                r.status = "failed";
                rep.rows.push_back(r);
            }
            continue;
        }
        ++rep.members_ok;
        for (auto [X, y, split] : {std::tuple{&val, y_val, "validation"}, std::tuple{&test, y_test, "test"}}) {
            std::vector<std::uint8_t> nat(X->rows());
            for (std::size_t r = 0; r < X->rows(); ++r) nat[r] = X->native[r * X->cols() + m];
            auto row = score_predictions(id, split, X->column(m), nat, y);
            row.weight = weights.w[m];
            rep.rows.push_back(std::move(row));
        }
    }
    if (rep.members_ok < val.cols()) {
        rep.warnings.insert(rep.warnings.begin(), "WARNING: ensemble degraded to " + std::to_string(rep.members_ok) +
                                                      " of " + std::to_string(val.cols()) + " models");
    }
    for (auto [X, y, split] : {std::tuple{&val, y_val, "validation"}, std::tuple{&test, y_test, "test"}}) {
        std::vector<double> p(X->rows());
        std::vector<std::uint8_t> nat(X->rows());
        for (std::size_t r = 0; r < X->rows(); ++r) {
            const auto e = predict_ensemble(weights, *X, r);
            p[r] = e.p;
            nat[r] = !e.fallback;
        }
        auto row = score_predictions("ensemble", split, p, nat, y);
        row.weight = 1.0;
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

struct ExperimentConfig {
    int workers = 1;
    WeightFitParams weight_fit;
};

struct ExperimentResult {
    FeatureTable features;
    std::vector<MemberOutcome> members;
    PredictionMatrix validation, test;
    EnsembleWeights weights;
    std::vector<double> ensemble_test;
    ExperimentReport report;
};

inline std::vector<std::string> member_errors(const std::vector<MemberOutcome>& members) {
    std::vector<std::string> e;
    for (const auto& m : members) e.push_back(m.member ? "" : (m.error.empty() ? "not trained" : m.error));
    return e;
}

/// Train all members, collect validation/test predictions, fit weights on validation, score test.
inline ExperimentResult run_experiment(const Dataset& ds, const SplitLabel& split,
                                       const std::vector<ModelSpec>& registry, const ExperimentConfig& cfg) {
    ExperimentResult res;
    const auto per_row = split.per_row(ds);
    res.features = compute_features(ds, split);
    PipelineContext ctx{&ds, &per_row, &res.features, cfg.workers};
    res.members = train_members(ctx, registry, cfg.workers);
    const auto val_rows = ctx.rows(Split::validation);
    const auto test_rows = ctx.rows(Split::test);
    res.validation = collect_predictions(res.members, ctx, val_rows, cfg.workers);
    res.test = collect_predictions(res.members, ctx, test_rows, cfg.workers);
    const auto y_val = labels_of(ds, val_rows);
    const auto y_test = labels_of(ds, test_rows);
    res.weights = fit_weights(res.validation, y_val, cfg.weight_fit);
    for (std::size_t r = 0; r < res.test.rows(); ++r) res.ensemble_test.push_back(predict_ensemble(res.weights, res.test, r).p);
    res.report = build_report(member_errors(res.members), res.validation, y_val, res.test, y_test, res.weights);
    for (const auto& m : res.members) {
        if (m.member && !m.member->warning.empty()) res.report.warnings.push_back(m.spec.model_id + ": " + m.member->warning);
    }
    return res;
}

namespace report_detail {
inline std::string fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}
}  // namespace report_detail

inline void write_report_text(std::ostream& out, const ExperimentReport& rep) {
    using report_detail::fixed;
    for (const auto& w : rep.warnings) out << w << '\n';
    if (!rep.warnings.empty()) out << '\n';
    char line[256];
    std::snprintf(line, sizeof line, "%-16s %-10s %-7s %8s %9s %8s %7s %9s %8s\n", "model_id", "split", "status",
                  "accuracy", "log_loss", "auc", "n", "coverage", "weight");
    out << line;
    for (const auto& r : rep.rows) {
        if (r.status != "ok") {
            std::snprintf(line, sizeof line, "%-16s %-10s %-7s\n", r.model_id.c_str(), r.split.c_str(), r.status.c_str());
        } else {
            std::snprintf(line, sizeof line, "%-16s %-10s %-7s %8s %9s %8s %7zu %9s %8s\n", r.model_id.c_str(),
                          r.split.c_str(), r.status.c_str(), fixed(r.accuracy).c_str(), fixed(r.log_loss).c_str(),
                          r.auc ? fixed(*r.auc).c_str() : "-", r.n, fixed(r.coverage).c_str(),
                          r.weight ? fixed(*r.weight).c_str() : "-");
        }
        out << line;
    }
}

inline void write_report_csv(std::ostream& out, const ExperimentReport& rep) {
    out << "model_id,split,status,accuracy,log_loss,auc,n,coverage,weight\n";
    for (const auto& r : rep.rows) {
        out << r.model_id << ',' << r.split << ',' << r.status << ',';
        if (r.status == "ok") {
            out << csv::format_double(r.accuracy) << ',' << csv::format_double(r.log_loss) << ','
                << (r.auc ? csv::format_double(*r.auc) : "") << ',' << r.n << ',' << csv::format_double(r.coverage)
                << ',' << (r.weight ? csv::format_double(*r.weight) : "");
        } else {
            out << ",,,,,";
        }
        out << '\n';
    }
}

inline nlohmann::ordered_json report_json(const ExperimentReport& rep) {
    nlohmann::ordered_json j;
    j["warnings"] = rep.warnings;
    j["members_ok"] = rep.members_ok;
    auto& rows = j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : rep.rows) {
        nlohmann::ordered_json o;
        o["model_id"] = r.model_id;
        o["split"] = r.split;
        o["status"] = r.status;
        if (r.status == "ok") {
            o["accuracy"] = r.accuracy;
            o["log_loss"] = r.log_loss;
            o["auc"] = r.auc ? nlohmann::ordered_json(*r.auc) : nlohmann::ordered_json();
            o["n"] = r.n;
            o["coverage"] = r.coverage;
            if (r.weight) o["weight"] = *r.weight;
        }
        rows.push_back(std::move(o));
    }
    auto& ens = j["ensemble"];
    ens["selected"] = rep.weights.selected;
    ens["base_rate"] = rep.weights.base_rate;
    ens["excluded_rows"] = rep.weights.excluded_rows;
    auto& w = ens["weights"] = nlohmann::ordered_json::object();
    for (std::size_t m = 0; m < rep.weights.w.size(); ++m) w[rep.weights.model_ids[m]] = rep.weights.w[m];
    ens["validation_log_loss_trace"] = rep.weights.trace;
    return j;
}

}  // namespace kt
