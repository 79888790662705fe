#include <gtest/gtest.h>

#include <cstring>
#include <set>
#include <sstream>

#include "kt/features/feature_io.hpp"
#include "kt/features/features.hpp"
#include "kt/ingest/synthetic.hpp"
#include "support/fixtures.hpp"

using namespace kt;
using kt::testing::make_interaction;

namespace {

SplitLabel all_train(const Dataset& ds) {
    SplitLabel s;
    for (const auto& x : ds.interactions()) s.assignment[x.answer_id] = Split::train;
    return s;
}

SyntheticData desk_synthetic(std::uint64_t seed = 3) {
    SynthConfig cfg;
    cfg.n_users = 60;
    cfg.n_questions = 80;
    cfg.n_quizzes = 8;
    cfg.n_skills = 16;
    cfg.n_groups = 6;
    cfg.responses_per_user = 40;
    cfg.seed = seed;
    return generate_synthetic(cfg);
}

bool same_bits(std::span<const double> a, std::span<const double> b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
}

}  // namespace

TEST(SmoothedMean, ExamplesFromDefinition) {
    EXPECT_DOUBLE_EQ(smoothed_mean(0, 0, 0.6), 0.6);
    EXPECT_NEAR(smoothed_mean(10, 10, 0.5), 12.5 / 15.0, 1e-15);
    EXPECT_NEAR(smoothed_mean(700000, 1000000, 0.2), 0.7, 1e-5);
}

TEST(DecayedAverage, MatchesClosedFormSum) {
    const std::vector<std::uint8_t> one{1};
    EXPECT_EQ(decayed_average(one, 0.9).value(), 1.0);

    const std::vector<std::uint8_t> h{1, 0};
    // direct weighted sum: weights gamma^(n-1-i)
    double num = 0, den = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        const double w = std::pow(0.9, static_cast<double>(h.size() - 1 - i));
        num += w * h[i];
        den += w;
    }
    EXPECT_NEAR(decayed_average(h, 0.9).value(), num / den, 1e-15);
    EXPECT_NEAR(decayed_average(h, 0.9).value(), 0.47368421052631576, 1e-12);

    EXPECT_FALSE(decayed_average({}, 0.5).has_value());
    EXPECT_THROW(decayed_average(h, 1.0), ValidationError);
    EXPECT_THROW(decayed_average(h, 0.0), ValidationError);
}

TEST(DecayedAverage, ConstantHistoryIsFixedPoint) {
    for (double gamma : {0.1, 0.5, 0.9, 0.99}) {
        EXPECT_DOUBLE_EQ(decayed_average(std::vector<std::uint8_t>(7, 1), gamma).value(), 1.0);
        EXPECT_DOUBLE_EQ(decayed_average(std::vector<std::uint8_t>(7, 0), gamma).value(), 0.0);
    }
}

TEST(DecayedAverage, ApproachesPlainMeanAsGammaGoesToOne) {
    const std::vector<std::uint8_t> h{1, 0, 0, 1, 1, 0, 1, 1, 1, 0};
    EXPECT_NEAR(decayed_average(h, 0.9999).value(), 0.6, 1e-3);
}

TEST(ComputeFeatures, FirstInteractionUsesDefaults) {
    auto ds = kt::testing::dataset_of({make_interaction(1, 1, 1, true, 100), make_interaction(2, 1, 2, false, 200)});
    auto t = compute_features(ds, all_train(ds));
    auto f = t.row(0);
    for (int c : {feature::user_prior, feature::skill_leaf_prior, feature::skill_mid_prior, feature::skill_root_prior,
                  feature::question_difficulty, feature::quiz_difficulty, feature::group_level, feature::momentum}) {
        EXPECT_EQ(f[c], 0.5) << kFeatureNames[c];
    }
    EXPECT_EQ(f[feature::user_volume], 0.0);
    EXPECT_EQ(f[feature::question_volume], 0.0);
    EXPECT_EQ(f[feature::dt_skill], -1.0);
    EXPECT_EQ(f[feature::dt_any], -1.0);
    EXPECT_EQ(f[feature::premium], 0.5);
}

TEST(ComputeFeatures, SingleUserPriorMatchesHandOracle) {
    auto ds = kt::testing::dataset_of({make_interaction(1, 1, 1, true, 100), make_interaction(1, 2, 2, true, 160),
                                       make_interaction(1, 3, 3, false, 400), make_interaction(1, 4, 4, true, 1000)});
    auto t = compute_features(ds, all_train(ds));
    const double global_prior = (2.0 + 1.0) / (3.0 + 2.0);  // Laplace-smoothed running rate after [1,1,0]
    auto f = t.row(3);
    EXPECT_NEAR(f[feature::user_prior], (2.0 + 5.0 * global_prior) / (3.0 + 5.0), 1e-15);
    EXPECT_NEAR(f[feature::user_volume], std::log(4.0), 1e-15);
    // all questions share the chain skill path 1|2|3
    EXPECT_NEAR(f[feature::skill_leaf_prior], f[feature::user_prior], 1e-15);
    const double mom = (0.81 * 1 + 0.9 * 1 + 0) / (0.81 + 0.9 + 1);
    EXPECT_NEAR(f[feature::momentum], mom, 1e-15);
    EXPECT_NEAR(f[feature::dt_any], std::log1p(600.0), 1e-15);
    EXPECT_NEAR(f[feature::dt_skill], std::log1p(600.0), 1e-15);
    EXPECT_NEAR(t.row(1)[feature::dt_any], std::log1p(60.0), 1e-15);
}

TEST(ComputeFeatures, ShortSkillPathsRepeatDeepestNode) {
    std::vector<Interaction> rows{make_interaction(1, 10, 1, true, 100), make_interaction(1, 11, 2, false, 200),
                                  make_interaction(1, 10, 3, true, 300)};
    std::vector<QuestionMeta> qs{{10, {1}}, {11, {1, 2}}};
    auto ds = build_dataset(rows, qs, {}, kt::testing::chain_skills());
    auto t = compute_features(ds, all_train(ds));
    auto f = t.row(2);  // question 10, path [1]: all three levels read node 1
    EXPECT_EQ(f[feature::skill_leaf_prior], f[feature::skill_mid_prior]);
    EXPECT_EQ(f[feature::skill_mid_prior], f[feature::skill_root_prior]);
    // node 1 has seen both earlier responses (1 and 0); node 2 only the incorrect one
    auto g = t.row(1);  // question 11, path [1,2]: mid = leaf = node 2, root = node 1
    EXPECT_EQ(g[feature::skill_leaf_prior], g[feature::skill_mid_prior]);
    EXPECT_NE(g[feature::skill_leaf_prior], g[feature::skill_root_prior]);
    // the orphan student (no metadata) falls back to neutral fills
    EXPECT_EQ(f[feature::premium], 0.5);
    EXPECT_EQ(f[feature::age_years], 0.0);
}

TEST(ComputeFeatures, RangesHoldOnSyntheticData) {
    auto data = desk_synthetic();
    auto split = split_random(data.dataset, {0.8, 0.1, 0.1}, 4);
    auto t = compute_features(data.dataset, split);
    ASSERT_EQ(t.rows(), data.dataset.size());
    ASSERT_EQ(t.width(), 14u);
    const double max_gap = std::log1p(2592000.0);
    for (std::size_t i = 0; i < t.rows(); ++i) {
        auto f = t.row(i);
        for (int c : {0, 2, 3, 4, 5, 7, 8}) {
            EXPECT_GT(f[c], 0.0);
            EXPECT_LT(f[c], 1.0);
        }
        EXPECT_GE(f[feature::user_volume], 0.0);
        EXPECT_GE(f[feature::question_volume], 0.0);
        for (int c : {feature::dt_skill, feature::dt_any}) {
            EXPECT_TRUE(f[c] == -1.0 || (f[c] >= 0.0 && f[c] <= max_gap));
        }
        EXPECT_GT(f[feature::age_years], 9.0);
        EXPECT_EQ(t.answer_ids[i], data.dataset[i].answer_id);
    }
}

TEST(ComputeFeatures, TruncateAndRecomputeIsBitwiseEqual) {
    auto data = desk_synthetic(5);
    const auto& ds = data.dataset;
    auto split = split_random(ds, {0.7, 0.15, 0.15}, 2);
    auto full = compute_features(ds, split);
    Rng rng(8);
    for (int probe = 0; probe < 30; ++probe) {
        const std::size_t x = rng.below(ds.size());
        std::vector<Interaction> prefix(ds.interactions().begin(), ds.interactions().begin() + x + 1);
        std::vector<QuestionMeta> qs;
        for (const auto& [_, q] : ds.questions()) qs.push_back(q);
        std::vector<StudentMeta> ss;
        for (const auto& [_, s] : ds.students()) ss.push_back(s);
        auto truncated = build_dataset(prefix, qs, ss, ds.skills());
        auto part = compute_features(truncated, split);
        EXPECT_TRUE(same_bits(part.row(x), full.row(x))) << "row " << x;
    }
}

TEST(ComputeFeatures, PermutingLaterInteractionsLeavesEarlierRowsUnchanged) {
    auto data = desk_synthetic(6);
    const auto& ds = data.dataset;
    auto split = all_train(ds);
    auto base = compute_features(ds, split);
    const std::size_t x = ds.size() / 2;
    auto rows = ds.interactions();
    std::vector<Timestamp> later;
    for (std::size_t i = x + 1; i < rows.size(); ++i) later.push_back(rows[i].timestamp);
    Rng rng(13);
    rng.shuffle(later.begin(), later.end());
    for (std::size_t i = x + 1; i < rows.size(); ++i) rows[i].timestamp = later[i - x - 1] + 1;
    std::vector<QuestionMeta> qs;
    for (const auto& [_, q] : ds.questions()) qs.push_back(q);
    std::vector<StudentMeta> ss;
    for (const auto& [_, s] : ds.students()) ss.push_back(s);
    auto shuffled = build_dataset(rows, qs, ss, ds.skills());
    auto again = compute_features(shuffled, split);
    for (std::size_t i = 0; i <= x; ++i) {
        ASSERT_EQ(shuffled[i].answer_id, ds[i].answer_id);
        EXPECT_TRUE(same_bits(again.row(i), base.row(i))) << "row " << i;
    }
}

TEST(ComputeFeatures, TestLabelsNeverReachAggregates) {
    auto data = desk_synthetic(7);
    const auto& ds = data.dataset;
    auto split = split_random(ds, {0.6, 0.2, 0.2}, 1);
    auto base = compute_features(ds, split);

    auto rows = ds.interactions();
    Rng rng(4);
    for (auto& x : rows) {
        if (split.of(x.answer_id) != Split::train && rng.bernoulli(0.5)) {
            x.is_correct ^= 1;
            x.chosen_option = x.is_correct ? x.correct_option
                                           : static_cast<Option>((static_cast<int>(x.correct_option) + 1) % 4);
        }
    }
    std::vector<QuestionMeta> qs;
    for (const auto& [_, q] : ds.questions()) qs.push_back(q);
    std::vector<StudentMeta> ss;
    for (const auto& [_, s] : ds.students()) ss.push_back(s);
    auto flipped = compute_features(build_dataset(rows, qs, ss, ds.skills()), split);
    ASSERT_EQ(flipped.values.size(), base.values.size());
    EXPECT_EQ(std::memcmp(flipped.values.data(), base.values.data(), base.values.size() * sizeof(double)), 0);
}

TEST(ComputeFeatures, AlwaysCorrectQuestionApproachesSmoothingBound) {
    std::vector<Interaction> rows;
    for (int i = 0; i < 400; ++i) rows.push_back(make_interaction(1 + i, 7, 1 + i, true, 1000 + i));
    auto ds = kt::testing::dataset_of(rows);
    auto t = compute_features(ds, all_train(ds));
    double previous = 0.0;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        const double total = static_cast<double>(i);
        const double prior = (total + 1.0) / (total + 2.0);
        const double bound = (total + 5.0 * prior) / (total + 5.0);
        EXPECT_NEAR(t.row(i)[feature::question_difficulty], bound, 1e-14);
        EXPECT_GE(t.row(i)[feature::question_difficulty], previous);
        previous = t.row(i)[feature::question_difficulty];
    }
    EXPECT_GT(previous, 0.99);
}

TEST(FeatureView, WidthsAndCoverage) {
    auto data = desk_synthetic();
    auto t = compute_features(data.dataset, all_train(data.dataset));
    EXPECT_EQ(feature_view(t, Granularity::full).width(), 14u);
    EXPECT_EQ(feature_view(t, Granularity::question).width(), 2u);
    EXPECT_EQ(feature_view(t, Granularity::user).width(), 10u);
    EXPECT_EQ(feature_view(t, Granularity::group).width(), 2u);
    EXPECT_EQ(feature_view(t, Granularity::quiz).width(), 2u);
    std::set<int> covered;
    for (auto g : {Granularity::question, Granularity::user, Granularity::group, Granularity::quiz}) {
        for (int c : view_columns(g)) covered.insert(c);
    }
    EXPECT_EQ(covered.size(), 14u);

    auto q = feature_view(t, Granularity::question);
    EXPECT_EQ(q.labels, t.labels);
    for (std::size_t i = 0; i < t.rows(); i += 37) {
        EXPECT_EQ(q.at(i, 0), t.at(i, feature::question_difficulty));
        EXPECT_EQ(q.at(i, 1), t.at(i, feature::question_volume));
    }
    EXPECT_THROW(parse_granularity("classroom"), ValidationError);
    EXPECT_THROW(feature_view(q, Granularity::user), ValidationError);
}

TEST(FeatureIo, KtftLayoutAndRoundTrip) {
    auto data = desk_synthetic();
    auto t = compute_features(data.dataset, all_train(data.dataset));
    auto bytes = encode_ktft(t);
    ASSERT_EQ(bytes.size(), 4 + 4 + 8 + t.rows() * (14 * 8 + 1));
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "KTFT");
    std::uint64_t n = 0;
    std::memcpy(&n, bytes.data() + 8, 8);
    EXPECT_EQ(n, t.rows());
    auto back = decode_ktft(bytes);
    EXPECT_EQ(back.values, t.values);
    EXPECT_EQ(back.labels, t.labels);
    attach_keys(back, data.dataset);
    EXPECT_EQ(back.answer_ids, t.answer_ids);

    bytes[0] = 'X';
    EXPECT_THROW(decode_ktft(bytes), ValidationError);
    EXPECT_THROW(encode_ktft(feature_view(t, Granularity::quiz)), ValidationError);
}

TEST(FeatureIo, CsvHeaderListsFeatureNames) {
    auto ds = kt::testing::dataset_of({make_interaction(1, 1, 1, true, 100)});
    std::ostringstream out;
    write_feature_csv(out, compute_features(ds, all_train(ds)));
    const auto text = out.str();
    EXPECT_EQ(text.substr(0, text.find('\n')),
              "answer_id,user_prior,user_volume,skill_leaf_prior,skill_mid_prior,skill_root_prior,"
              "question_difficulty,question_volume,quiz_difficulty,group_level,momentum,dt_skill,dt_any,age_years,"
              "premium,is_correct");
}
