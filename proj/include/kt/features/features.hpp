#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kt/core/dataset.hpp"
#include "kt/error.hpp"

namespace kt {

inline constexpr std::size_t kFeatureCount = 14;

inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "user_prior",  "user_volume",  "skill_leaf_prior", "skill_mid_prior", "skill_root_prior",
    "question_difficulty", "question_volume", "quiz_difficulty", "group_level", "momentum",
    "dt_skill",    "dt_any",       "age_years",        "premium"};

/// Column positions of the features, 0-based (f1 is index 0).
namespace feature {
inline constexpr int user_prior = 0;
inline constexpr int user_volume = 1;
inline constexpr int skill_leaf_prior = 2;
inline constexpr int skill_mid_prior = 3;
inline constexpr int skill_root_prior = 4;
inline constexpr int question_difficulty = 5;
inline constexpr int question_volume = 6;
inline constexpr int quiz_difficulty = 7;
inline constexpr int group_level = 8;
inline constexpr int momentum = 9;
inline constexpr int dt_skill = 10;
inline constexpr int dt_any = 11;
inline constexpr int age_years = 12;
inline constexpr int premium = 13;
}  // namespace feature

inline constexpr double kSmoothingStrength = 5.0;
inline constexpr double kMomentumDecay = 0.9;
inline constexpr double kMaxGapSeconds = 30.0 * 86400.0;
inline constexpr double kSecondsPerYear = 365.2425 * 86400.0;

/// (success + alpha*prior) / (total + alpha).
inline double smoothed_mean(double success, double total, double global_prior, double alpha = kSmoothingStrength) {
    return (success + alpha * global_prior) / (total + alpha);
}

/// Exponentially decayed mean, most recent outcome weighted 1, the one before gamma, ...
inline std::optional<double> decayed_average(std::span<const std::uint8_t> history, double gamma) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ValidationError("decay constant must lie in (0,1)");
    if (history.empty()) return std::nullopt;
    double num = 0.0;
    double den = 0.0;
    for (auto y : history) {
        num = gamma * num + y;
        den = gamma * den + 1.0;
    }
    return num / den;
}

/// Log-compressed elapsed time, capped at 30 days.
inline double log_gap(double seconds) { return std::log1p(std::min(seconds, kMaxGapSeconds)); }

enum class Granularity { question, user, group, quiz, full };

inline const char* granularity_name(Granularity g) {
    switch (g) {
        case Granularity::question: return "question";
        case Granularity::user: return "user";
        case Granularity::group: return "group";
        case Granularity::quiz: return "quiz";
        case Granularity::full: return "full";
    }
    return "?";
}

inline Granularity parse_granularity(std::string_view s) {
    if (s == "question") return Granularity::question;
    if (s == "user") return Granularity::user;
    if (s == "group") return Granularity::group;
    if (s == "quiz") return Granularity::quiz;
    if (s == "full") return Granularity::full;
    throw ValidationError("unknown granularity '" + std::string(s) + "'");
}

/// Feature indices selected by each granularity view.
inline std::vector<int> view_columns(Granularity g) {
    using namespace feature;
    switch (g) {
        case Granularity::question: return {question_difficulty, question_volume};
        case Granularity::user:
            return {user_prior, user_volume, skill_leaf_prior, skill_mid_prior, skill_root_prior,
                    momentum,   dt_skill,    dt_any,           age_years,       premium};
        case Granularity::group: return {group_level, question_difficulty};
        case Granularity::quiz: return {quiz_difficulty, question_difficulty};
        case Granularity::full: {
            std::vector<int> all(kFeatureCount);
            for (std::size_t i = 0; i < kFeatureCount; ++i) all[i] = static_cast<int>(i);
            return all;
        }
    }
    throw ValidationError("unknown granularity");
}

/// Row-major feature matrix aligned with dataset order.
struct FeatureTable {
    std::vector<int> columns;  // feature index of each stored column
    std::vector<double> values;
    std::vector<std::uint8_t> labels;
    std::vector<Id> answer_ids;
    std::vector<EntityKeys> keys;

    std::size_t width() const noexcept { return columns.size(); }
    std::size_t rows() const noexcept { return labels.size(); }

    std::span<const double> row(std::size_t i) const { return {values.data() + i * width(), width()}; }
    double at(std::size_t i, std::size_t col) const { return values[i * width() + col]; }

    std::vector<std::string> column_names() const {
        std::vector<std::string> names;
        for (int c : columns) names.emplace_back(kFeatureNames[static_cast<std::size_t>(c)]);
        return names;
    }

    /// Sub-table with the given rows, in the given order.
    FeatureTable select_rows(std::span<const std::size_t> idx) const {
        FeatureTable out;
        out.columns = columns;
        out.values.reserve(idx.size() * width());
        for (auto i : idx) {
            auto r = row(i);
            out.values.insert(out.values.end(), r.begin(), r.end());
            out.labels.push_back(labels[i]);
            if (!answer_ids.empty()) out.answer_ids.push_back(answer_ids[i]);
            if (!keys.empty()) out.keys.push_back(keys[i]);
        }
        return out;
    }
};

/// Column subset for one granularity; labels and keys are carried along.
inline FeatureTable feature_view(const FeatureTable& table, Granularity g) {
    const auto wanted = view_columns(g);
    std::vector<std::size_t> src;
    for (int f : wanted) {
        auto it = std::find(table.columns.begin(), table.columns.end(), f);
        if (it == table.columns.end()) {
            throw ValidationError(std::string("table lacks feature ") + std::string(kFeatureNames[f]));
        }
        src.push_back(static_cast<std::size_t>(it - table.columns.begin()));
    }
    FeatureTable out;
    out.columns = wanted;
    out.labels = table.labels;
    out.answer_ids = table.answer_ids;
    out.keys = table.keys;
    out.values.reserve(table.rows() * wanted.size());
    for (std::size_t i = 0; i < table.rows(); ++i) {
        for (auto c : src) out.values.push_back(table.at(i, c));
    }
    return out;
}

struct SuccessCount {
    double success = 0.0;
    double total = 0.0;
    void add(std::uint8_t y) {
        success += y;
        total += 1.0;
    }
};

/// Running state of the forward scan; only training rows are folded in.
class RunningAggregates {
public:
    RunningAggregates(const Dataset& ds) {
        users_.resize(ds.user_ids().size());
        questions_.resize(ds.question_ids().size());
        quizzes_.resize(ds.quiz_ids().size());
        groups_.resize(ds.group_ids().size());
        momentum_.resize(ds.user_ids().size());
        last_any_.assign(ds.user_ids().size(), std::nullopt);
        std::vector<Id> skill_ids;
        for (const auto& [id, _] : ds.skills().nodes()) skill_ids.push_back(id);
        skills_ = IdMap::from_ids(skill_ids);
    }

    /// Running global prior, Laplace-smoothed so it stays in (0,1).
    double global_prior() const { return (global_.success + 1.0) / (global_.total + 2.0); }

    const SuccessCount& user(std::int32_t u) const { return users_[u]; }
    const SuccessCount& question(std::int32_t q) const { return questions_[q]; }
    const SuccessCount& quiz(std::int32_t q) const { return quizzes_[q]; }
    const SuccessCount& group(std::int32_t g) const { return groups_[g]; }

    SuccessCount user_skill(std::int32_t u, Id skill) const {
        auto it = user_skill_.find(key(u, skill));
        return it == user_skill_.end() ? SuccessCount{} : it->second;
    }

    std::optional<double> momentum(std::int32_t u) const {
        const auto& m = momentum_[u];
        if (m.den == 0.0) return std::nullopt;
        return m.num / m.den;
    }

    std::optional<Timestamp> last_any(std::int32_t u) const { return last_any_[u]; }

    std::optional<Timestamp> last_on_skill(std::int32_t u, Id skill) const {
        auto it = last_skill_.find(key(u, skill));
        if (it == last_skill_.end()) return std::nullopt;
        return it->second;
    }

    void update(const Interaction& x, const EntityKeys& k, std::span<const Id> path) {
        const auto y = x.is_correct;
        global_.add(y);
        users_[k.user].add(y);
        questions_[k.question].add(y);
        quizzes_[k.quiz].add(y);
        groups_[k.group].add(y);
        for (Id s : path) user_skill_[key(k.user, s)].add(y);
        auto& m = momentum_[k.user];
        m.num = kMomentumDecay * m.num + y;
        m.den = kMomentumDecay * m.den + 1.0;
        last_any_[k.user] = x.timestamp;
        if (!path.empty()) last_skill_[key(k.user, path.back())] = x.timestamp;
    }

private:
    struct Momentum {
        double num = 0.0;
        double den = 0.0;
    };

    std::uint64_t key(std::int32_t u, Id skill) const {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(u)) << 32) |
               static_cast<std::uint32_t>(skills_.at(skill));
    }

    SuccessCount global_;
    std::vector<SuccessCount> users_, questions_, quizzes_, groups_;
    std::unordered_map<std::uint64_t, SuccessCount> user_skill_;
    std::vector<Momentum> momentum_;
    std::vector<std::optional<Timestamp>> last_any_;
    std::unordered_map<std::uint64_t, Timestamp> last_skill_;
    IdMap skills_;
};

/// Median date of birth over student metadata, as epoch seconds.
inline std::optional<double> median_dob_seconds(const Dataset& ds) {
    std::vector<double> dobs;
    for (const auto& [_, s] : ds.students()) {
        if (s.dob) dobs.push_back(static_cast<double>(to_epoch_seconds(*s.dob)));
    }
    if (dobs.empty()) return std::nullopt;
    std::sort(dobs.begin(), dobs.end());
    const auto n = dobs.size();
    return n % 2 ? dobs[n / 2] : 0.5 * (dobs[n / 2 - 1] + dobs[n / 2]);
}

/// One forward scan over the dataset. Each row sees only strictly earlier
/// training rows; validation and test rows are emitted but never folded in.
inline FeatureTable compute_features(const Dataset& ds, const SplitLabel& split) {
    const auto splits = split.per_row(ds);
    FeatureTable table;
    table.columns = view_columns(Granularity::full);
    table.values.reserve(ds.size() * kFeatureCount);
    table.labels.reserve(ds.size());
    table.answer_ids.reserve(ds.size());
    table.keys.reserve(ds.size());

    RunningAggregates agg(ds);
    const auto median_dob = median_dob_seconds(ds);

    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& x = ds[i];
        const auto& k = ds.keys(i);
        const auto path = ds.skill_path(x.question_id);
        const double prior = agg.global_prior();
        std::array<double, kFeatureCount> f{};

        const auto& u = agg.user(k.user);
        f[feature::user_prior] = smoothed_mean(u.success, u.total, prior);
        f[feature::user_volume] = std::log1p(u.total);
        if (!path.empty()) {
            const Id root = path.front();
            const Id mid = path[std::min<std::size_t>(1, path.size() - 1)];
            const Id leaf = path.back();
            const auto sl = agg.user_skill(k.user, leaf);
            const auto sm = agg.user_skill(k.user, mid);
            const auto sr = agg.user_skill(k.user, root);
            f[feature::skill_leaf_prior] = smoothed_mean(sl.success, sl.total, prior);
            f[feature::skill_mid_prior] = smoothed_mean(sm.success, sm.total, prior);
            f[feature::skill_root_prior] = smoothed_mean(sr.success, sr.total, prior);
        } else {
            f[feature::skill_leaf_prior] = f[feature::skill_mid_prior] = f[feature::skill_root_prior] = prior;
        }
        const auto& q = agg.question(k.question);
        f[feature::question_difficulty] = smoothed_mean(q.success, q.total, prior);
        f[feature::question_volume] = std::log1p(q.total);
        const auto& z = agg.quiz(k.quiz);
        f[feature::quiz_difficulty] = smoothed_mean(z.success, z.total, prior);
        const auto& g = agg.group(k.group);
        f[feature::group_level] = smoothed_mean(g.success, g.total, prior);
        f[feature::momentum] = agg.momentum(k.user).value_or(prior);

        const auto last_skill = path.empty() ? std::nullopt : agg.last_on_skill(k.user, path.back());
        f[feature::dt_skill] = last_skill ? log_gap(static_cast<double>(x.timestamp - *last_skill)) : -1.0;
        const auto last_any = agg.last_any(k.user);
        f[feature::dt_any] = last_any ? log_gap(static_cast<double>(x.timestamp - *last_any)) : -1.0;

        const auto* student = ds.student_meta(x.user_id);
        const double ts = static_cast<double>(x.timestamp);
        if (student && student->dob) {
            f[feature::age_years] = (ts - static_cast<double>(to_epoch_seconds(*student->dob))) / kSecondsPerYear;
        } else if (median_dob) {
            f[feature::age_years] = (ts - *median_dob) / kSecondsPerYear;
        } else {
            f[feature::age_years] = 0.0;
        }
        f[feature::premium] =
            (student && student->premium_pupil) ? (*student->premium_pupil ? 1.0 : 0.0) : 0.5;

        table.values.insert(table.values.end(), f.begin(), f.end());
        table.labels.push_back(x.is_correct);
        table.answer_ids.push_back(x.answer_id);
        table.keys.push_back(k);

        if (splits[i] == Split::train) agg.update(x, k, path);
    }
    return table;
}

/// Row indices of the dataset carrying the given split label.
inline std::vector<std::size_t> rows_with_split(const std::vector<Split>& per_row, Split s) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < per_row.size(); ++i) {
        if (per_row[i] == s) out.push_back(i);
    }
    return out;
}

}  // namespace kt
