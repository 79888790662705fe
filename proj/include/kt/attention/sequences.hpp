#pragma once

#include <cstdint>
#include <vector>

#include "kt/core/dataset.hpp"
#include "kt/rng.hpp"

namespace kt {

/// Answer-channel vocabulary.
enum AnswerToken : int { kCorrectToken = 0, kIncorrectToken = 1, kMaskToken = 2, kPadToken = 3 };
inline constexpr int kAnswerVocab = 4;

/// One chronological window of a user's history.
struct KtSequence {
    Id user_id = 0;
    std::vector<int> questions;     // dense question index
    std::vector<int> answers;       // AnswerToken
    std::vector<std::size_t> rows;  // dataset row of each step

    std::size_t size() const noexcept { return questions.size(); }
};

/// Per-user chronological sequences cut into non-overlapping windows of max_seq_len.
/// Training rows carry their answer; validation and test rows carry MASK.
inline std::vector<KtSequence> build_sequences(const Dataset& ds, const std::vector<Split>& split,
                                               std::size_t max_seq_len) {
    if (max_seq_len == 0) throw ValidationError("max_seq_len must be positive");
    if (split.size() != ds.size()) throw ValidationError("split labels do not align with the dataset");
    std::vector<KtSequence> out;
    for (std::size_t u = 0; u < ds.user_ids().size(); ++u) {
        const auto& rows = ds.rows_of_user(static_cast<std::int32_t>(u));
        for (std::size_t start = 0; start < rows.size(); start += max_seq_len) {
            KtSequence s;
            s.user_id = ds.user_ids().raw(static_cast<std::int32_t>(u));
            for (std::size_t i = start; i < std::min(rows.size(), start + max_seq_len); ++i) {
                const auto r = rows[i];
                s.rows.push_back(r);
                s.questions.push_back(ds.keys(r).question);
                s.answers.push_back(split[r] == Split::train ? (ds[r].is_correct ? kCorrectToken : kIncorrectToken)
                                                             : kMaskToken);
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

struct MaskedSequence {
    KtSequence sequence;
    std::vector<std::size_t> positions;  // masked steps
    std::vector<int> targets;            // original answer token at each masked step
};

/// Replaces known answers with MASK independently with probability p; question tokens are untouched.
/// At least one known answer is masked when any exist.
inline MaskedSequence mask_answers(const KtSequence& seq, double p, Rng& rng) {
    if (!(p > 0.0 && p < 1.0)) throw ValidationError("mask probability must be in (0,1)");
    MaskedSequence m{seq, {}, {}};
    std::vector<std::size_t> known;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (seq.answers[i] != kCorrectToken && seq.answers[i] != kIncorrectToken) continue;
        known.push_back(i);
        if (rng.bernoulli(p)) m.positions.push_back(i);
    }
    if (m.positions.empty() && !known.empty()) m.positions.push_back(known[rng.below(known.size())]);
    for (auto i : m.positions) {
        m.targets.push_back(seq.answers[i]);
        m.sequence.answers[i] = kMaskToken;
    }
    return m;
}

}  // namespace kt
