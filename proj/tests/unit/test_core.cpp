#include <gtest/gtest.h>

#include <algorithm>

#include "kt/core/dataset.hpp"
#include "kt/ingest/synthetic.hpp"
#include "support/fixtures.hpp"

using namespace kt;
using kt::testing::make_interaction;

TEST(BuildDataset, EmptyInputsGiveEmptyDataset) {
    auto ds = build_dataset({}, {}, {}, SkillTree{});
    EXPECT_EQ(ds.size(), 0u);
    EXPECT_EQ(ds.user_ids().size(), 0u);
    EXPECT_TRUE(ds.orphans().empty());
}

TEST(BuildDataset, EqualTimestampsOrderedByAnswerId) {
    auto ds = kt::testing::dataset_of({make_interaction(1, 1, 9, true, 100), make_interaction(1, 1, 7, true, 100),
                                       make_interaction(1, 1, 8, false, 100)});
    ASSERT_EQ(ds.size(), 3u);
    EXPECT_EQ(ds[0].answer_id, 7);
    EXPECT_EQ(ds[1].answer_id, 8);
    EXPECT_EQ(ds[2].answer_id, 9);
}

TEST(BuildDataset, RejectsDuplicateAnswerId) {
    try {
        kt::testing::dataset_of({make_interaction(1, 1, 42, true, 100), make_interaction(2, 1, 42, true, 200)});
        FAIL() << "expected rejection";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("42"), std::string::npos);
    }
}

TEST(BuildDataset, RejectsInconsistentCorrectness) {
    auto x = make_interaction(1, 1, 1, true, 100);
    x.chosen_option = Option::D;
    EXPECT_THROW(kt::testing::dataset_of({x}), ValidationError);
}

TEST(SkillTree, RejectsCycle) {
    EXPECT_THROW(SkillTree::from_parents({{1, 3}, {2, 1}, {3, 2}}), ValidationError);
    EXPECT_THROW(SkillTree::from_parents({{1, 1}}), ValidationError);
}

TEST(SkillTree, LevelsFollowParents) {
    auto tree = SkillTree::from_parents({{3, std::nullopt}, {57, 3}, {412, 57}, {58, 3}});
    EXPECT_EQ(tree.level(3), 1);
    EXPECT_EQ(tree.level(57), 2);
    EXPECT_EQ(tree.level(412), 3);
    EXPECT_EQ(tree.level(58), 2);
    const std::vector<Id> ok{3, 57, 412}, bad{57, 412};
    EXPECT_TRUE(tree.is_root_path(ok));
    EXPECT_FALSE(tree.is_root_path(bad));
}

TEST(BuildDataset, OrphansAreFlaggedNotDropped) {
    std::vector<Interaction> rows{make_interaction(1, 10, 1, true, 100), make_interaction(2, 11, 2, false, 101)};
    std::vector<QuestionMeta> qs{{10, {1, 2, 3}}};
    std::vector<StudentMeta> ss{{1, Gender::female, std::nullopt, true}};
    auto ds = build_dataset(rows, qs, ss, kt::testing::chain_skills());
    ASSERT_EQ(ds.size(), 2u);
    ASSERT_EQ(ds.orphans().size(), 1u);
    EXPECT_EQ(ds.orphans()[0].row, 1u);
    EXPECT_TRUE(ds.orphans()[0].missing_question);
    EXPECT_TRUE(ds.orphans()[0].missing_student);
}

TEST(BuildDataset, RejectsSkillPathOutsideTree) {
    std::vector<QuestionMeta> qs{{10, {2, 3}}};
    EXPECT_THROW(build_dataset({}, qs, {}, kt::testing::chain_skills()), ValidationError);
}

namespace {

SyntheticData small_synthetic() {
    SynthConfig cfg;
    cfg.n_users = 100;
    cfg.n_questions = 40;
    cfg.n_quizzes = 8;
    cfg.n_skills = 10;
    cfg.n_groups = 5;
    cfg.responses_per_user = 30;
    cfg.seed = 11;
    return generate_synthetic(cfg);
}

}  // namespace

TEST(BuildDataset, IndexLookupsAgreeWithLinearScan) {
    const auto data = small_synthetic();
    const auto& ds = data.dataset;
    Rng rng(5);
    for (int probe = 0; probe < 20; ++probe) {
        const auto u = static_cast<std::int32_t>(rng.below(ds.user_ids().size()));
        const auto q = static_cast<std::int32_t>(rng.below(ds.question_ids().size()));
        const Id raw_u = ds.user_ids().raw(u);
        const Id raw_q = ds.question_ids().raw(q);

        std::vector<std::size_t> scan;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            if (ds[i].user_id == raw_u && ds[i].question_id == raw_q) scan.push_back(i);
        }
        std::vector<std::size_t> via_index;
        for (auto i : ds.rows_of_user(u)) {
            if (ds.keys(i).question == q) via_index.push_back(i);
        }
        EXPECT_EQ(scan, via_index);
    }
}

TEST(BuildDataset, PerEntityIndicesEnumerateExactlyInOrder) {
    const auto data = small_synthetic();
    const auto& ds = data.dataset;
    for (std::int32_t u = 0; u < static_cast<std::int32_t>(ds.user_ids().size()); ++u) {
        std::vector<std::size_t> expected;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            if (ds[i].user_id == ds.user_ids().raw(u)) expected.push_back(i);
        }
        auto rows = ds.rows_of_user(u);
        EXPECT_EQ(std::vector<std::size_t>(rows.begin(), rows.end()), expected);
    }
    std::size_t total = 0;
    for (std::int32_t q = 0; q < static_cast<std::int32_t>(ds.quiz_ids().size()); ++q) total += ds.rows_of_quiz(q).size();
    EXPECT_EQ(total, ds.size());
}

TEST(BuildDataset, SortingIsIdempotent) {
    const auto data = small_synthetic();
    auto rows = data.dataset.interactions();
    sort_chronologically(rows);
    EXPECT_EQ(rows, data.dataset.interactions());
    EXPECT_TRUE(validate(data.dataset).empty());
}

namespace {

Dataset numbered_dataset(int n) {
    std::vector<Interaction> rows;
    for (int i = 0; i < n; ++i) rows.push_back(make_interaction(1 + i % 17, 1 + i % 5, 1000 + i, i % 3 == 0, 100 + i));
    return kt::testing::dataset_of(std::move(rows));
}

}  // namespace

TEST(SplitRandom, DegenerateFractionsPutEverythingInTrain) {
    auto ds = numbered_dataset(50);
    auto split = split_random(ds, {1.0, 0.0, 0.0}, 3);
    for (const auto& x : ds.interactions()) EXPECT_EQ(split.of(x.answer_id), Split::train);
}

TEST(SplitRandom, EmpiricalFractionsWithinTwoPercent) {
    auto ds = numbered_dataset(10000);
    auto split = split_random(ds, {0.8, 0.1, 0.1}, 1);
    std::array<int, 3> counts{};
    for (const auto& [_, s] : split.assignment) ++counts[static_cast<int>(s)];
    EXPECT_NEAR(counts[0] / 10000.0, 0.8, 0.02);
    EXPECT_NEAR(counts[1] / 10000.0, 0.1, 0.02);
    EXPECT_NEAR(counts[2] / 10000.0, 0.1, 0.02);
}

TEST(SplitRandom, DeterministicAndOrderInvariant) {
    auto ds = numbered_dataset(500);
    auto a = split_random(ds, {0.6, 0.2, 0.2}, 9);
    auto b = split_random(ds, {0.6, 0.2, 0.2}, 9);
    EXPECT_EQ(a.assignment, b.assignment);

    // Same interactions, different timestamps and therefore a different stored order.
    std::vector<Interaction> permuted = ds.interactions();
    for (auto& x : permuted) x.timestamp = 100000 - x.timestamp;
    auto ds2 = kt::testing::dataset_of(permuted);
    ASSERT_NE(ds2[0].answer_id, ds[0].answer_id);
    auto c = split_random(ds2, {0.6, 0.2, 0.2}, 9);
    EXPECT_EQ(a.assignment, c.assignment);
}

TEST(SplitRandom, RejectsTinyDatasetsAndBadFractions) {
    EXPECT_THROW(split_random(numbered_dataset(2), {1, 0, 0}, 1), ValidationError);
    EXPECT_THROW(split_random(numbered_dataset(10), {0.5, 0.2, 0.2}, 1), ValidationError);
}
