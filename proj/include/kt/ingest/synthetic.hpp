#pragma once

#include <chrono>
#include <cmath>
#include <map>
#include <vector>

#include "kt/core/dataset.hpp"
#include "kt/math.hpp"
#include "kt/rng.hpp"

namespace kt {

struct SynthConfig {
    int n_users = 200;
    int n_questions = 400;
    int n_skills = 40;  // leaf skills; roots and mid-level nodes are derived
    int n_quizzes = 40;
    int n_groups = 20;
    int responses_per_user = 100;
    double learning_rate_per_response = 0.005;
    double ability_mean = 0.0;
    double ability_sd = 1.0;
    double discrimination_mu = 0.0;  // ln a ~ N(mu, sigma)
    double discrimination_sigma = 0.3;
    double difficulty_mean = 0.0;
    double difficulty_sd = 1.0;
    /// Quizzes and groups are dealt round-robin into blocks; users only attempt
    /// quizzes of their group's block, so blocks have disjoint user pools.
    int n_blocks = 1;
    std::uint64_t seed = 1;

    void validate() const {
        if (n_users <= 0 || n_questions <= 0 || n_skills <= 0 || n_quizzes <= 0 || n_groups <= 0 ||
            responses_per_user <= 0 || n_blocks <= 0) {
            throw ValidationError("synthetic config counts must be positive");
        }
        if (n_questions < n_quizzes) throw ValidationError("n_questions must be >= n_quizzes");
        if (n_blocks > n_quizzes || n_blocks > n_groups) {
            throw ValidationError("n_blocks must not exceed n_quizzes or n_groups");
        }
        if (!(ability_sd > 0) || !(discrimination_sigma > 0) || !(difficulty_sd > 0)) {
            throw ValidationError("synthetic prior standard deviations must be positive");
        }
        if (!(learning_rate_per_response >= 0)) throw ValidationError("learning_rate_per_response must be >= 0");
    }
};

struct ItemTruth {
    double a = 1.0;
    double b = 0.0;
};

/// Generating parameters, keyed by raw ids.
struct SynthTruth {
    std::map<Id, double> initial_theta;          // by user
    std::map<Id, double> theta_at_answer;        // ability in effect when the answer was drawn
    std::map<Id, ItemTruth> items;               // by question
    std::map<Id, Id> quiz_of_question;
    std::map<Id, Id> leaf_skill_of_question;
    std::map<Id, Id> group_of_user;
    std::map<Id, int> block_of_quiz;
    double learning_rate = 0.0;
};

inline double response_probability(double theta, double a, double b) { return logistic(a * (theta - b)); }

struct SyntheticData {
    Dataset dataset;
    SynthTruth truth;
};

namespace synth_ids {
inline Id user(int i) { return 10000 + 3 * static_cast<Id>(i); }
inline Id question(int j) { return 50000 + 2 * static_cast<Id>(j); }
inline Id group(int g) { return 700 + static_cast<Id>(g); }
inline Id quiz(int q) { return 9000 + static_cast<Id>(q); }
}  // namespace synth_ids

/// Draws a dataset from a 2-PL response model with per-response ability drift.
inline SyntheticData generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    SyntheticData out;
    auto& truth = out.truth;
    truth.learning_rate = cfg.learning_rate_per_response;

    // 3-level skill tree: roots -> mids -> leaves, contiguous ids from 1.
    const int n_leaves = cfg.n_skills;
    const int n_roots = std::max(1, (n_leaves + 15) / 16);
    const int n_mids = std::max(n_roots, (n_leaves + 3) / 4);
    std::map<Id, std::optional<Id>> parents;
    auto root_id = [](int r) { return static_cast<Id>(r + 1); };
    auto mid_id = [&](int m) { return static_cast<Id>(n_roots + m + 1); };
    auto leaf_id = [&](int l) { return static_cast<Id>(n_roots + n_mids + l + 1); };
    for (int r = 0; r < n_roots; ++r) parents[root_id(r)] = std::nullopt;
    for (int m = 0; m < n_mids; ++m) parents[mid_id(m)] = root_id(m % n_roots);
    for (int l = 0; l < n_leaves; ++l) parents[leaf_id(l)] = mid_id(l % n_mids);
    SkillTree skills = SkillTree::from_parents(parents);

    std::vector<QuestionMeta> questions;
    std::vector<std::vector<int>> quiz_questions(cfg.n_quizzes);
    std::vector<ItemTruth> items(cfg.n_questions);
    for (int j = 0; j < cfg.n_questions; ++j) {
        const int q = j % cfg.n_quizzes;
        quiz_questions[q].push_back(j);
        items[j].a = std::exp(rng.normal(cfg.discrimination_mu, cfg.discrimination_sigma));
        items[j].b = rng.normal(cfg.difficulty_mean, cfg.difficulty_sd);
        const int l = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_leaves)));
        const Id leaf = leaf_id(l);
        const Id mid = *parents.at(leaf);
        const Id root = *parents.at(mid);
        const Id qid = synth_ids::question(j);
        questions.push_back({qid, {root, mid, leaf}});
        truth.items[qid] = items[j];
        truth.quiz_of_question[qid] = synth_ids::quiz(q);
        truth.leaf_skill_of_question[qid] = leaf;
    }
    std::vector<std::vector<int>> block_quizzes(cfg.n_blocks);
    for (int q = 0; q < cfg.n_quizzes; ++q) {
        block_quizzes[q % cfg.n_blocks].push_back(q);
        truth.block_of_quiz[synth_ids::quiz(q)] = q % cfg.n_blocks;
    }

    constexpr Timestamp kBase = 1577836800;  // 2020-01-01T00:00:00Z
    constexpr double kWindow = 30.0 * 86400.0;
    const double gap_log_median = std::log(3600.0);

    std::vector<StudentMeta> students;
    std::vector<Interaction> rows;
    rows.reserve(static_cast<std::size_t>(cfg.n_users) * cfg.responses_per_user);
    Id next_answer = 1;
    for (int i = 0; i < cfg.n_users; ++i) {
        const Id uid = synth_ids::user(i);
        const int g = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_groups)));
        const int block = g % cfg.n_blocks;
        double theta = rng.normal(cfg.ability_mean, cfg.ability_sd);
        truth.initial_theta[uid] = theta;
        truth.group_of_user[uid] = synth_ids::group(g);

        StudentMeta meta;
        meta.user_id = uid;
        meta.gender = static_cast<Gender>(rng.below(4));
        const int year = 2005 + static_cast<int>(rng.below(5));
        const unsigned month = 1 + static_cast<unsigned>(rng.below(12));
        const unsigned day = 1 + static_cast<unsigned>(rng.below(28));
        meta.dob = std::chrono::year_month_day{std::chrono::year{year}, std::chrono::month{month},
                                               std::chrono::day{day}};
        if (rng.uniform() >= 0.1) meta.premium_pupil = rng.bernoulli(0.3);
        students.push_back(meta);

        double t = static_cast<double>(kBase) + rng.uniform() * kWindow;
        std::vector<int> order = block_quizzes[block];
        std::size_t cursor = order.size();
        int answered = 0;
        while (answered < cfg.responses_per_user) {
            if (cursor == order.size()) {
                rng.shuffle(order.begin(), order.end());
                cursor = 0;
            }
            const int q = order[cursor++];
            for (int j : quiz_questions[q]) {
                if (answered == cfg.responses_per_user) break;
                t += std::max(1.0, std::round(std::exp(rng.normal(gap_log_median, 1.0))));
                const bool correct = rng.bernoulli(response_probability(theta, items[j].a, items[j].b));
                Interaction x;
                x.user_id = uid;
                x.question_id = synth_ids::question(j);
                x.answer_id = next_answer++;
                x.is_correct = correct ? 1 : 0;
                x.correct_option = static_cast<Option>(rng.below(4));
                x.chosen_option = correct ? x.correct_option
                                          : static_cast<Option>((static_cast<int>(x.correct_option) + 1 +
                                                                 static_cast<int>(rng.below(3))) % 4);
                x.timestamp = static_cast<Timestamp>(t);
                x.group_id = synth_ids::group(g);
                x.quiz_id = synth_ids::quiz(q);
                truth.theta_at_answer[x.answer_id] = theta;
                rows.push_back(x);
                theta += cfg.learning_rate_per_response;
                ++answered;
            }
        }
    }
    out.dataset = build_dataset(std::move(rows), std::move(questions), std::move(students), std::move(skills));
    return out;
}

}  // namespace kt
