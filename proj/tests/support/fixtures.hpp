#pragma once

#include <set>
#include <vector>

#include "kt/core/dataset.hpp"
#include "kt/rng.hpp"

namespace kt::testing {

inline Interaction make_interaction(Id user, Id question, Id answer, bool correct, Timestamp ts, Id group = 1,
                                    Id quiz = 1) {
    Interaction x;
    x.user_id = user;
    x.question_id = question;
    x.answer_id = answer;
    x.is_correct = correct ? 1 : 0;
    x.correct_option = Option::B;
    x.chosen_option = correct ? Option::B : Option::C;
    x.timestamp = ts;
    x.group_id = group;
    x.quiz_id = quiz;
    return x;
}

/// Single-root, single-chain skill tree 1 -> 2 -> 3 and matching question metadata.
inline SkillTree chain_skills() {
    return SkillTree::from_parents({{1, std::nullopt}, {2, 1}, {3, 2}});
}

inline Dataset dataset_of(std::vector<Interaction> rows) {
    std::vector<QuestionMeta> qs;
    std::vector<StudentMeta> ss;
    std::set<Id> qids, uids;
    for (const auto& x : rows) {
        qids.insert(x.question_id);
        uids.insert(x.user_id);
    }
    for (Id q : qids) qs.push_back({q, {1, 2, 3}});
    for (Id u : uids) ss.push_back({u, Gender::unspecified, std::nullopt, std::nullopt});
    return build_dataset(std::move(rows), std::move(qs), std::move(ss), chain_skills());
}

/// Users answer random questions; correctness is a fixed function of the question
/// (even raw question ids are answered correctly).
inline Dataset deterministic_answer_fixture(int n_users = 20, int per_user = 30, int n_questions = 12,
                                            std::uint64_t seed = 1) {
    Rng rng(seed);
    std::vector<Interaction> rows;
    Id answer = 1;
    for (int u = 0; u < n_users; ++u) {
        Timestamp ts = 1000 + u;
        for (int i = 0; i < per_user; ++i) {
            const Id q = 100 + static_cast<Id>(rng.below(static_cast<std::uint64_t>(n_questions)));
            rows.push_back(make_interaction(500 + u, q, answer++, q % 2 == 0, ts += 60));
        }
    }
    return dataset_of(std::move(rows));
}

}  // namespace kt::testing
