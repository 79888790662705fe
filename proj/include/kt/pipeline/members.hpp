#pragma once

#include <chrono>
#include <optional>
#include <variant>

#include "kt/attention/transformer.hpp"
#include "kt/features/features.hpp"
#include "kt/latent/clustering.hpp"
#include "kt/latent/irt.hpp"
#include "kt/latent/skill_cf.hpp"
#include "kt/models/tabular.hpp"

namespace kt {

/// Encoder plus the raw question ids behind its dense question tokens.
struct AttentionModel {
    KtTransformer net;
    std::vector<Id> vocabulary;  // ascending raw question ids; token = position
    TrainReport report;

    void encode(ByteWriter& w) const {
        w.put_vector(vocabulary);
        net.encode(w);
    }
    static AttentionModel decode(ByteReader& r) {
        AttentionModel m;
        m.vocabulary = r.get_vector<Id>();
        m.net = KtTransformer::decode(r);
        return m;
    }

    /// Question tokens of `ds` re-expressed in this model's vocabulary.
    std::vector<int> token_map(const Dataset& ds) const {
        std::vector<int> map(ds.question_ids().size(), net.unknown_question());
        for (std::size_t q = 0; q < map.size(); ++q) {
            const Id raw = ds.question_ids().raw(static_cast<std::int32_t>(q));
            auto it = std::lower_bound(vocabulary.begin(), vocabulary.end(), raw);
            if (it != vocabulary.end() && *it == raw) map[q] = static_cast<int>(it - vocabulary.begin());
        }
        return map;
    }
};

/// Everything a member needs to train or score.
struct PipelineContext {
    const Dataset* dataset = nullptr;
    const std::vector<Split>* split = nullptr;
    const FeatureTable* features = nullptr;  // all rows, dataset order
    int workers = 1;

    const Dataset& ds() const { return *dataset; }
    std::vector<std::size_t> rows(Split s) const { return rows_with_split(*split, s); }
};

using MemberVariant = std::variant<TabularModel, AttentionModel, SkillCfModel, IrtStore>;

struct FittedMember {
    ModelSpec spec;
    MemberVariant model;
    std::optional<QuestionClustering> clustering;  // irt-clustered only, for export
    std::string warning;

    std::vector<std::uint8_t> serialize() const {
        if (const auto* t = std::get_if<TabularModel>(&model)) return encode_artifact(spec, t->payload());
        ByteWriter w;
        std::visit(
            [&](const auto& m) {
                if constexpr (!std::is_same_v<std::decay_t<decltype(m)>, TabularModel>) m.encode(w);
            },
            model);
        return encode_artifact(spec, w.bytes());
    }

    static FittedMember deserialize(std::span<const std::uint8_t> bytes) {
        if (is_tabular(decode_artifact(bytes).spec.algorithm)) {
            auto t = TabularModel::deserialize(bytes);
            return {t.spec, std::move(t), std::nullopt, {}};
        }
        auto art = decode_artifact(bytes);
        ByteReader r(art.payload);
        FittedMember f{art.spec, SkillCfModel{}, std::nullopt, {}};
        switch (art.spec.algorithm) {
            case Algorithm::attention_kt: f.model = AttentionModel::decode(r); break;
            case Algorithm::skill_cf: f.model = SkillCfModel::decode(r); break;
            default: f.model = IrtStore::decode(r); break;
        }
        if (!r.done()) throw ValidationError("trailing bytes in " + art.spec.model_id + " payload");
        return f;
    }
};

inline EncoderConfig encoder_config(const ModelSpec& s) {
    EncoderConfig c;
    c.d_model = s.int_param("d_model");
    c.n_heads = s.int_param("n_heads");
    c.n_blocks = s.int_param("n_blocks");
    c.d_ff = s.int_param("d_ff");
    c.max_seq_len = s.int_param("max_seq_len");
    c.mask_prob = s.param("mask_prob");
    c.dropout = s.param("dropout");
    c.seed = s.seed;
    return c;
}

inline TrainConfig attention_train_config(const ModelSpec& s) {
    TrainConfig c;
    c.batch_size = s.int_param("batch_size");
    c.lr = s.param("lr");
    c.max_steps = s.int_param("max_steps");
    c.eval_every = s.int_param("eval_every");
    c.patience = s.int_param("patience");
    c.seed = s.seed;
    return c;
}

inline AttentionModel train_attention(const ModelSpec& spec, const PipelineContext& ctx) {
    const auto& ds = ctx.ds();
    const auto cfg = encoder_config(spec);
    AttentionModel m;
    m.vocabulary = ds.question_ids().raw_ids();
    m.net = KtTransformer(cfg, m.vocabulary.size());
    const auto seqs = build_sequences(ds, *ctx.split, static_cast<std::size_t>(cfg.max_seq_len));
    const auto val = positions_with_split(ds, seqs, *ctx.split, Split::validation);
    m.report = train_transformer(m.net, seqs, attention_train_config(spec), seqs, val.positions, val.labels);
    if (m.report.diverged) throw Error("attention model diverged (non-finite loss)");
    return m;
}

/// Trains one registry member on the training rows of the context.
inline FittedMember train_member(const ModelSpec& spec, const PipelineContext& ctx) {
    const auto train_rows = ctx.rows(Split::train);
    FittedMember f{spec, SkillCfModel{}, std::nullopt, {}};
    switch (spec.algorithm) {
        case Algorithm::gbt:
        case Algorithm::knn:
        case Algorithm::naive_bayes:
        case Algorithm::bayes_glm: {
            auto t = train_tabular(spec, ctx.features->select_rows(train_rows));
            f.warning = t.warning();
            f.model = std::move(t);
            break;
        }
        case Algorithm::attention_kt: {
            auto a = train_attention(spec, ctx);
            if (a.report.early_stopped) f.warning = "early stopped at step " + std::to_string(a.report.steps);
            f.model = std::move(a);
            break;
        }
        case Algorithm::skill_cf:
            f.model = train_skill_cf(ctx.ds(), train_rows,
                                     {spec.int_param("k"), spec.param("lambda"), spec.int_param("iters")},
                                     spec.param("bypass_total"), spec.seed, ctx.workers);
            break;
        case Algorithm::irt_quiz:
        case Algorithm::irt_clustered: {
            const IrtFitParams prm{spec.param("tol"), spec.int_param("max_iter"), {}};
            std::map<Id, Id> clusters;
            auto keying = IrtStore::Keying::quiz;
            if (spec.algorithm == Algorithm::irt_clustered) {
                f.clustering = cluster_questions(ctx.ds(), train_rows,
                                                 {spec.int_param("min_co"), spec.param("target_cluster_size")});
                clusters = f.clustering->assignment;
                keying = IrtStore::Keying::cluster;
            }
            auto store = fit_irt_store(ctx.ds(), train_rows, keying, clusters, prm, ctx.workers);
            std::size_t degenerate = 0;
            for (const auto& [k, m] : store.models) degenerate += m.degenerate;
            if (degenerate) f.warning = std::to_string(degenerate) + " degenerate response matrices use fallback fits";
            f.model = std::move(store);
            break;
        }
    }
    return f;
}

struct MemberScores {
    std::vector<double> p;
    std::vector<std::uint8_t> native;
};

/// Scores the given dataset rows. Every row gets a probability; `native` is 0 where a fallback answered.
inline MemberScores predict_member(FittedMember& f, const PipelineContext& ctx, std::span<const std::size_t> rows) {
    const auto& ds = ctx.ds();
    MemberScores out{std::vector<double>(rows.size()), std::vector<std::uint8_t>(rows.size(), 1)};
    if (auto* t = std::get_if<TabularModel>(&f.model)) {
        const auto probs = t->predict(ctx.features->select_rows(rows));
        std::copy(probs.begin(), probs.end(), out.p.begin());
    } else if (auto* a = std::get_if<AttentionModel>(&f.model)) {
        auto seqs = build_sequences(ds, *ctx.split, static_cast<std::size_t>(a->net.config().max_seq_len));
        const auto map = a->token_map(ds);
        for (auto& s : seqs) {
            for (auto& q : s.questions) q = map[static_cast<std::size_t>(q)];
        }
        std::vector<const KtSequence*> ptrs;
        for (const auto& s : seqs) ptrs.push_back(&s);
        const auto probs = a->net.predict_proba(ptrs);
        std::vector<double> by_row(ds.size(), 0.5);
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            for (std::size_t j = 0; j < seqs[i].size(); ++j) by_row[seqs[i].rows[j]] = probs[i][j];
        }
        for (std::size_t i = 0; i < rows.size(); ++i) {
            out.p[i] = by_row[rows[i]];
            out.native[i] = map[static_cast<std::size_t>(ds.keys(rows[i]).question)] != a->net.unknown_question();
        }
    } else if (auto* c = std::get_if<SkillCfModel>(&f.model)) {
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& x = ds[rows[i]];
            const auto r = predict_skill_cf(*c, ds, x.user_id, x.question_id);
            out.p[i] = r.p;
            out.native[i] = r.native();
        }
    } else {
        const auto& s = std::get<IrtStore>(f.model);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& x = ds[rows[i]];
            const auto r = predict_irt(s, x.user_id, x.question_id, x.quiz_id);
            out.p[i] = r.p;
            out.native[i] = r.fallback == IrtFallback::none;
        }
    }
    return out;
}

}  // namespace kt
