#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "kt/attention/sequences.hpp"
#include "kt/autodiff/adam.hpp"
#include "kt/autodiff/tape.hpp"
#include "kt/binary_io.hpp"
#include "kt/ingest/csv.hpp"
#include "kt/math.hpp"

namespace kt {

struct EncoderConfig {
    int d_model = 64;
    int n_heads = 4;
    int n_blocks = 2;
    int d_ff = 256;
    int max_seq_len = 64;
    double mask_prob = 0.2;
    double dropout = 0.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (d_model <= 0 || n_heads <= 0 || n_blocks < 0 || d_ff <= 0 || max_seq_len <= 0) {
            throw ValidationError("encoder dimensions must be positive");
        }
        if (d_model % 2 != 0) throw ValidationError("d_model must be even (question/answer embedding split)");
        if (d_model % n_heads != 0) throw ValidationError("d_model must be divisible by n_heads");
        if (!(mask_prob > 0.0 && mask_prob < 1.0)) throw ValidationError("mask_prob must be in (0,1)");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must be in [0,1)");
    }
};

/// Sinusoidal positional table (len, d).
inline ad::Tensor sinusoidal_positions(std::size_t len, std::size_t d) {
    ad::Tensor t({len, d});
    for (std::size_t p = 0; p < len; ++p) {
        for (std::size_t i = 0; i < d; i += 2) {
            const double rate = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
            t[p * d + i] = std::sin(static_cast<double>(p) * rate);
            if (i + 1 < d) t[p * d + i + 1] = std::cos(static_cast<double>(p) * rate);
        }
    }
    return t;
}

struct EncoderBlock {
    ad::Parameter wq, bq, wk, bk, wv, bv, wo, bo;
    ad::Parameter ln1_g, ln1_b;
    ad::Parameter w1, b1, w2, b2;
    ad::Parameter ln2_g, ln2_b;
};

struct ForwardOutput {
    ad::Var logits;                   // (B, T, 2); class 0 is CORRECT
    std::vector<ad::Var> attention;   // per block and head, (B, T, T)
};

/// Encoder-only masked answer model: concat(question, answer) embeddings plus
/// sinusoidal positions, post-LN encoder blocks, linear 2-way head.
class KtTransformer {
public:
    KtTransformer() = default;

    KtTransformer(const EncoderConfig& cfg, std::size_t n_questions) : cfg_(cfg), n_questions_(n_questions) {
        cfg.validate();
        Rng rng(hash_combine(cfg.seed, 0x6174746eULL));
        const auto d = static_cast<std::size_t>(cfg.d_model);
        const auto half = d / 2;
        const auto ff = static_cast<std::size_t>(cfg.d_ff);
        auto dense = [&](std::string name, std::size_t in, std::size_t out) {
            return ad::Parameter(std::move(name), ad::normal_tensor({in, out}, 1.0 / std::sqrt(double(in)), rng));
        };
        auto vec = [](std::string name, std::size_t n, double fill) {
            return ad::Parameter(std::move(name), ad::Tensor({n}, fill));
        };
        q_emb_ = ad::Parameter("q_emb", ad::normal_tensor({n_questions + 1, half}, 1.0, rng));
        a_emb_ = ad::Parameter("a_emb", ad::normal_tensor({static_cast<std::size_t>(kAnswerVocab), half}, 1.0, rng));
        blocks_.resize(static_cast<std::size_t>(cfg.n_blocks));
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            const std::string p = "block" + std::to_string(b) + ".";
            auto& B = blocks_[b];
            B.wq = dense(p + "wq", d, d);
            B.bq = vec(p + "bq", d, 0.0);
            B.wk = dense(p + "wk", d, d);
            B.bk = vec(p + "bk", d, 0.0);
            B.wv = dense(p + "wv", d, d);
            B.bv = vec(p + "bv", d, 0.0);
            B.wo = dense(p + "wo", d, d);
            B.bo = vec(p + "bo", d, 0.0);
            B.ln1_g = vec(p + "ln1_g", d, 1.0);
            B.ln1_b = vec(p + "ln1_b", d, 0.0);
            B.w1 = dense(p + "w1", d, ff);
            B.b1 = vec(p + "b1", ff, 0.0);
            B.w2 = dense(p + "w2", ff, d);
            B.b2 = vec(p + "b2", d, 0.0);
            B.ln2_g = vec(p + "ln2_g", d, 1.0);
            B.ln2_b = vec(p + "ln2_b", d, 0.0);
        }
        // zero head: an untrained model predicts exactly 0.5
        head_w_ = ad::Parameter("head_w", ad::Tensor({d, 2}, 0.0));
        head_b_ = ad::Parameter("head_b", ad::Tensor({2}, 0.0));
        positions_ = sinusoidal_positions(static_cast<std::size_t>(cfg.max_seq_len), d);
    }

    const EncoderConfig& config() const noexcept { return cfg_; }
    std::size_t n_questions() const noexcept { return n_questions_; }
    int unknown_question() const noexcept { return static_cast<int>(n_questions_); }

    std::vector<ad::Parameter*> parameters() { return collect<ad::Parameter>(*this); }
    std::vector<const ad::Parameter*> parameters() const { return collect<const ad::Parameter>(*this); }

    /// Records the forward pass for a padded batch. Sequences longer than
    /// max_seq_len are rejected; unknown question indices map to the reserved row.
    /// `rng` drives dropout and is only needed when training with dropout > 0.
    ForwardOutput forward(ad::Tape& t, const std::vector<const KtSequence*>& batch, Rng* rng = nullptr) {
        if (batch.empty()) throw ValidationError("forward: empty batch");
        std::size_t T = 0;
        for (const auto* s : batch) T = std::max(T, s->size());
        if (T == 0) throw ValidationError("forward: all sequences empty");
        if (T > static_cast<std::size_t>(cfg_.max_seq_len)) throw ValidationError("forward: sequence exceeds max_seq_len");
        const std::size_t Bn = batch.size();
        const auto d = static_cast<std::size_t>(cfg_.d_model);
        const auto H = static_cast<std::size_t>(cfg_.n_heads);
        const std::size_t dk = d / H;
        const double drop = rng ? cfg_.dropout : 0.0;

        std::vector<int> q_idx(Bn * T, unknown_question()), a_idx(Bn * T, kPadToken);
        ad::Tensor key_mask({Bn, T, T}, 0.0);
        for (std::size_t b = 0; b < Bn; ++b) {
            const auto& s = *batch[b];
            for (std::size_t i = 0; i < s.size(); ++i) {
                const int q = s.questions[i];
                q_idx[b * T + i] = q >= 0 && static_cast<std::size_t>(q) < n_questions_ ? q : unknown_question();
                a_idx[b * T + i] = s.answers[i];
            }
            for (std::size_t j = s.size(); j < T; ++j) {
                for (std::size_t i = 0; i < T; ++i) key_mask[(b * T + i) * T + j] = -1e9;
            }
        }
        ad::Tensor pos({T, d});
        std::copy_n(positions_.data.begin(), T * d, pos.data.begin());

        ForwardOutput out;
        const auto qe = t.embedding_lookup(t.param(q_emb_), std::move(q_idx), {Bn, T});
        const auto ae = t.embedding_lookup(t.param(a_emb_), std::move(a_idx), {Bn, T});
        auto x = t.add(t.concat({qe, ae}), t.constant(std::move(pos)));
        const auto mask = t.constant(std::move(key_mask));
        const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
        for (auto& B : blocks_) {
            const auto q = t.linear(x, t.param(B.wq), t.param(B.bq));
            const auto k = t.linear(x, t.param(B.wk), t.param(B.bk));
            const auto v = t.linear(x, t.param(B.wv), t.param(B.bv));
            std::vector<ad::Var> heads;
            for (std::size_t h = 0; h < H; ++h) {
                const auto qh = t.slice(q, h * dk, (h + 1) * dk);
                const auto kh = t.slice(k, h * dk, (h + 1) * dk);
                const auto vh = t.slice(v, h * dk, (h + 1) * dk);
                const auto scores = t.add(t.scale(t.matmul(qh, t.transpose(kh)), inv_sqrt_dk), mask);
                const auto attn = t.softmax(scores);
                out.attention.push_back(attn);
                heads.push_back(t.matmul(attn, vh));
            }
            auto attn_out = t.linear(t.concat(heads), t.param(B.wo), t.param(B.bo));
            if (drop > 0) attn_out = t.dropout(attn_out, drop, *rng);
            x = t.layer_norm(t.add(x, attn_out), t.param(B.ln1_g), t.param(B.ln1_b));
            auto ff = t.linear(t.gelu_approx(t.linear(x, t.param(B.w1), t.param(B.b1))), t.param(B.w2), t.param(B.b2));
            if (drop > 0) ff = t.dropout(ff, drop, *rng);
            x = t.layer_norm(t.add(x, ff), t.param(B.ln2_g), t.param(B.ln2_b));
        }
        out.logits = t.linear(x, t.param(head_w_), t.param(head_b_));
        return out;
    }

    /// P(correct) for every step of every sequence, in eval mode.
    std::vector<std::vector<double>> predict_proba(const std::vector<const KtSequence*>& seqs,
                                                   std::size_t batch_size = 32) {
        std::vector<std::vector<double>> out(seqs.size());
        for (std::size_t start = 0; start < seqs.size(); start += batch_size) {
            const std::vector<const KtSequence*> batch(seqs.begin() + start,
                                                       seqs.begin() + std::min(seqs.size(), start + batch_size));
            ad::Tape t;
            const auto& L = t.value(forward(t, batch).logits);
            const std::size_t T = L.dim(1);
            for (std::size_t b = 0; b < batch.size(); ++b) {
                auto& probs = out[start + b];
                for (std::size_t i = 0; i < batch[b]->size(); ++i) {
                    const double z0 = L[(b * T + i) * 2], z1 = L[(b * T + i) * 2 + 1];
                    probs.push_back(clamp_probability(logistic(z0 - z1)));
                }
            }
        }
        return out;
    }

    void encode(ByteWriter& w) const {
        w.put_magic("KTTX");
        w.put<std::uint32_t>(1);
        for (int v : {cfg_.d_model, cfg_.n_heads, cfg_.n_blocks, cfg_.d_ff, cfg_.max_seq_len}) w.put<std::int32_t>(v);
        w.put<double>(cfg_.mask_prob);
        w.put<double>(cfg_.dropout);
        w.put<std::uint64_t>(cfg_.seed);
        w.put<std::uint64_t>(n_questions_);
        const auto ps = parameters();
        w.put<std::uint32_t>(static_cast<std::uint32_t>(ps.size()));
        for (const auto* p : ps) {
            w.put_string(p->name);
            w.put_vector(p->value.shape);
            w.put_vector(p->value.data);
        }
    }

    static KtTransformer decode(ByteReader& r) {
        r.expect_magic("KTTX");
        if (r.get<std::uint32_t>() != 1) throw ValidationError("unsupported KTTX version");
        EncoderConfig cfg;
        cfg.d_model = r.get<std::int32_t>();
        cfg.n_heads = r.get<std::int32_t>();
        cfg.n_blocks = r.get<std::int32_t>();
        cfg.d_ff = r.get<std::int32_t>();
        cfg.max_seq_len = r.get<std::int32_t>();
        cfg.mask_prob = r.get<double>();
        cfg.dropout = r.get<double>();
        cfg.seed = r.get<std::uint64_t>();
        const auto nq = r.get<std::uint64_t>();
        KtTransformer m(cfg, nq);
        auto ps = m.parameters();
        if (r.get<std::uint32_t>() != ps.size()) throw ValidationError("KTTX parameter count mismatch");
        for (auto* p : ps) {
            const auto name = r.get_string();
            if (name != p->name) throw ValidationError("KTTX: expected tensor " + p->name + ", found " + name);
            auto shape = r.get_vector<std::size_t>();
            if (shape != p->value.shape) throw ValidationError("KTTX: shape mismatch for " + name);
            p->value.data = r.get_vector<double>();
            if (p->value.data.size() != ad::numel(shape)) throw ValidationError("KTTX: size mismatch for " + name);
        }
        return m;
    }

    /// Copies of all parameter values (for best-checkpoint restore).
    std::vector<std::vector<double>> snapshot() {
        std::vector<std::vector<double>> s;
        for (auto* p : parameters()) s.push_back(p->value.data);
        return s;
    }
    void restore(const std::vector<std::vector<double>>& s) {
        auto ps = parameters();
        for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value.data = s[i];
    }

private:
    template <typename P, typename Self>
    static std::vector<P*> collect(Self& self) {
        std::vector<P*> ps{&self.q_emb_, &self.a_emb_};
        for (auto& B : self.blocks_) {
            for (auto* p : {&B.wq, &B.bq, &B.wk, &B.bk, &B.wv, &B.bv, &B.wo, &B.bo, &B.ln1_g, &B.ln1_b, &B.w1, &B.b1,
                            &B.w2, &B.b2, &B.ln2_g, &B.ln2_b}) {
                ps.push_back(p);
            }
        }
        ps.push_back(&self.head_w_);
        ps.push_back(&self.head_b_);
        return ps;
    }

    EncoderConfig cfg_;
    std::size_t n_questions_ = 0;
    ad::Parameter q_emb_, a_emb_;
    std::vector<EncoderBlock> blocks_;
    ad::Parameter head_w_, head_b_;
    ad::Tensor positions_;
};

struct TrainConfig {
    int batch_size = 16;
    double lr = 1e-4;
    int max_steps = 1500;
    int eval_every = 100;  // validation log-loss cadence for early stopping
    int patience = 3;      // evaluations without improvement before stopping
    std::uint64_t seed = 1;
};

struct TrainReport {
    std::vector<double> loss;                        // per step
    std::vector<std::pair<int, double>> validation;  // (step, log-loss)
    int steps = 0;
    int best_step = 0;
    bool diverged = false;
    bool early_stopped = false;
};

/// Mean log-loss of P(correct) over the dataset rows listed per sequence step.
inline double masked_position_log_loss(KtTransformer& model, const std::vector<KtSequence>& seqs,
                                       const std::vector<std::vector<std::size_t>>& positions,
                                       const std::vector<std::vector<std::uint8_t>>& labels) {
    std::vector<const KtSequence*> ptrs;
    for (const auto& s : seqs) ptrs.push_back(&s);
    const auto probs = model.predict_proba(ptrs);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        for (std::size_t j = 0; j < positions[i].size(); ++j) {
            const double p = probs[i][positions[i][j]];
            sum -= labels[i][j] ? std::log(p) : std::log(1.0 - p);
            ++n;
        }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

/// Masked-answer training with Adam. `validation` holds sequences whose scored
/// steps are already MASK, with the positions and labels to score; when empty,
/// training runs for max_steps.
inline TrainReport train_transformer(KtTransformer& model, const std::vector<KtSequence>& train,
                                     const TrainConfig& cfg,
                                     const std::vector<KtSequence>& validation = {},
                                     const std::vector<std::vector<std::size_t>>& val_positions = {},
                                     const std::vector<std::vector<std::uint8_t>>& val_labels = {}) {
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < train.size(); ++i) {
        for (int a : train[i].answers) {
            if (a == kCorrectToken || a == kIncorrectToken) {
                usable.push_back(i);
                break;
            }
        }
    }
    if (usable.empty()) throw ValidationError("attention model: no training sequence has a known answer");
    if (cfg.batch_size <= 0 || cfg.max_steps < 0) throw ValidationError("attention model: invalid training config");

    Rng rng(hash_combine(cfg.seed, 0x747261696eULL));
    ad::AdamConfig adam;
    adam.lr = cfg.lr;
    ad::AdamState state;
    auto params = model.parameters();
    TrainReport report;
    const bool validate = !validation.empty() && cfg.eval_every > 0;
    double best = std::numeric_limits<double>::infinity();
    auto best_params = model.snapshot();
    int stale = 0;
    const auto mask_p = model.config().mask_prob;

    for (int step = 0; step < cfg.max_steps; ++step) {
        // sample a batch without replacement
        std::vector<std::size_t> pick = usable;
        const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), pick.size());
        for (std::size_t i = 0; i < bs; ++i) std::swap(pick[i], pick[i + rng.below(pick.size() - i)]);
        std::vector<MaskedSequence> masked;
        for (std::size_t i = 0; i < bs; ++i) masked.push_back(mask_answers(train[pick[i]], mask_p, rng));
        std::vector<const KtSequence*> batch;
        for (const auto& m : masked) batch.push_back(&m.sequence);

        std::size_t T = 0;
        for (const auto* s : batch) T = std::max(T, s->size());
        std::vector<int> targets(bs * T, 0);
        std::vector<std::uint8_t> on(bs * T, 0);
        for (std::size_t b = 0; b < bs; ++b) {
            for (std::size_t j = 0; j < masked[b].positions.size(); ++j) {
                targets[b * T + masked[b].positions[j]] = masked[b].targets[j];
                on[b * T + masked[b].positions[j]] = 1;
            }
        }
        for (auto* p : params) p->zero_grad();
        ad::Tape tape;
        const auto fwd = model.forward(tape, batch, model.config().dropout > 0 ? &rng : nullptr);
        const auto loss = tape.cross_entropy_masked(fwd.logits, std::move(targets), std::move(on));
        const double lv = tape.value(loss)[0];
        if (!std::isfinite(lv)) {
            report.diverged = true;
            model.restore(best_params);
            break;
        }
        tape.backward(loss);
        ad::adam_step(params, state, adam);
        report.loss.push_back(lv);
        report.steps = step + 1;

        if (validate && (step + 1) % cfg.eval_every == 0) {
            const double vl = masked_position_log_loss(model, validation, val_positions, val_labels);
            report.validation.emplace_back(step + 1, vl);
            if (!std::isfinite(vl)) {
                report.diverged = true;
                model.restore(best_params);
                break;
            }
            if (vl < best) {
                best = vl;
                best_params = model.snapshot();
                report.best_step = step + 1;
                stale = 0;
            } else if (++stale >= cfg.patience) {
                report.early_stopped = true;
                model.restore(best_params);
                break;
            }
        }
    }
    // keep the parameters with the best validation loss seen
    if (validate && report.best_step > 0 && !report.diverged) model.restore(best_params);
    if (!validate) report.best_step = report.steps;
    return report;
}

/// Steps of each sequence that belong to `rows_wanted` (dataset rows), with labels.
struct ScoredPositions {
    std::vector<std::vector<std::size_t>> positions;
    std::vector<std::vector<std::uint8_t>> labels;
};

inline ScoredPositions positions_with_split(const Dataset& ds, const std::vector<KtSequence>& seqs,
                                            const std::vector<Split>& split, Split wanted) {
    ScoredPositions out;
    for (const auto& s : seqs) {
        out.positions.emplace_back();
        out.labels.emplace_back();
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (split[s.rows[i]] != wanted) continue;
            out.positions.back().push_back(i);
            out.labels.back().push_back(ds[s.rows[i]].is_correct);
        }
    }
    return out;
}

/// P(correct) per dataset row; every non-training answer of a user is masked.
inline std::vector<double> predict_rows(KtTransformer& model, const Dataset& ds, const std::vector<Split>& split) {
    const auto seqs = build_sequences(ds, split, static_cast<std::size_t>(model.config().max_seq_len));
    std::vector<const KtSequence*> ptrs;
    for (const auto& s : seqs) ptrs.push_back(&s);
    const auto probs = model.predict_proba(ptrs);
    std::vector<double> out(ds.size(), 0.5);
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        for (std::size_t j = 0; j < seqs[i].size(); ++j) out[seqs[i].rows[j]] = probs[i][j];
    }
    return out;
}

inline void write_loss_curve(std::ostream& out, const TrainReport& r) {
    out << "step,loss\n";
    for (std::size_t i = 0; i < r.loss.size(); ++i) out << i + 1 << ',' << csv::format_double(r.loss[i]) << '\n';
}

}  // namespace kt
