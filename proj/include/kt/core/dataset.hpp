#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kt/error.hpp"
#include "kt/rng.hpp"

namespace kt {

using Id = std::int64_t;
using Timestamp = std::int64_t;  // UTC epoch seconds

enum class Option : std::uint8_t { A = 0, B = 1, C = 2, D = 3 };

inline char option_char(Option o) { return static_cast<char>('A' + static_cast<int>(o)); }

inline std::optional<Option> parse_option(std::string_view s) {
    if (s.size() != 1) return std::nullopt;
    const char c = s[0];
    if (c >= 'A' && c <= 'D') return static_cast<Option>(c - 'A');
    if (c >= '1' && c <= '4') return static_cast<Option>(c - '1');
    return std::nullopt;
}

struct Interaction {
    Id user_id = 0;
    Id question_id = 0;
    Id answer_id = 0;
    std::uint8_t is_correct = 0;
    Option correct_option = Option::A;
    Option chosen_option = Option::A;
    Timestamp timestamp = 0;
    Id group_id = 0;
    Id quiz_id = 0;
    std::optional<Id> scheme_id;
    std::optional<double> confidence;

    bool operator==(const Interaction&) const = default;
};

/// Chronological order used everywhere: timestamp, then answer_id.
inline bool chronological_less(const Interaction& a, const Interaction& b) noexcept {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    return a.answer_id < b.answer_id;
}

inline void sort_chronologically(std::vector<Interaction>& rows) {
    std::sort(rows.begin(), rows.end(), chronological_less);
}

struct SkillNode {
    std::optional<Id> parent;
    int level = 1;
};

/// Skill hierarchy. Roots have level 1, children level(parent)+1.
class SkillTree {
public:
    SkillTree() = default;

    /// Builds levels from a parent map; rejects cycles and dangling parents.
    static SkillTree from_parents(const std::map<Id, std::optional<Id>>& parents) {
        SkillTree tree;
        for (const auto& [id, parent] : parents) {
            if (parent && !parents.contains(*parent)) {
                throw ValidationError("skill " + std::to_string(id) + " has unknown parent " +
                                      std::to_string(*parent));
            }
        }
        // 0 = unvisited, 1 = on stack, 2 = done
        std::map<Id, int> state;
        for (const auto& [start, _] : parents) {
            if (state[start] == 2) continue;
            std::vector<Id> chain;
            Id cur = start;
            for (;;) {
                auto& st = state[cur];
                if (st == 1) throw ValidationError("cyclic skill tree at skill " + std::to_string(cur));
                if (st == 2) break;
                st = 1;
                chain.push_back(cur);
                const auto& p = parents.at(cur);
                if (!p) break;
                cur = *p;
            }
            for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
                const auto& p = parents.at(*it);
                const int level = p ? tree.nodes_.at(*p).level + 1 : 1;
                tree.nodes_[*it] = SkillNode{p, level};
                state[*it] = 2;
            }
        }
        return tree;
    }

    bool contains(Id id) const { return nodes_.contains(id); }
    const SkillNode& node(Id id) const { return nodes_.at(id); }
    int level(Id id) const { return nodes_.at(id).level; }
    std::size_t size() const noexcept { return nodes_.size(); }
    const std::map<Id, SkillNode>& nodes() const noexcept { return nodes_; }

    /// True when `path` starts at a root and each element is the parent of the next.
    bool is_root_path(std::span<const Id> path) const {
        if (path.empty()) return false;
        for (std::size_t i = 0; i < path.size(); ++i) {
            auto it = nodes_.find(path[i]);
            if (it == nodes_.end()) return false;
            const auto& parent = it->second.parent;
            if (i == 0 ? parent.has_value() : (!parent || *parent != path[i - 1])) return false;
        }
        return true;
    }

    bool operator==(const SkillTree& other) const {
        if (nodes_.size() != other.nodes_.size()) return false;
        return std::equal(nodes_.begin(), nodes_.end(), other.nodes_.begin(), [](const auto& a, const auto& b) {
            return a.first == b.first && a.second.parent == b.second.parent && a.second.level == b.second.level;
        });
    }

private:
    std::map<Id, SkillNode> nodes_;
};

struct QuestionMeta {
    Id question_id = 0;
    std::vector<Id> skill_path;  // root -> leaf
    bool operator==(const QuestionMeta&) const = default;
};

enum class Gender : std::uint8_t { unspecified = 0, female = 1, male = 2, other = 3 };

struct StudentMeta {
    Id user_id = 0;
    Gender gender = Gender::unspecified;
    std::optional<std::chrono::year_month_day> dob;
    std::optional<bool> premium_pupil;
    bool operator==(const StudentMeta&) const = default;
};

inline Timestamp to_epoch_seconds(std::chrono::year_month_day d) {
    return std::chrono::sys_seconds(std::chrono::sys_days(d)).time_since_epoch().count();
}

/// Raw id <-> contiguous index map. Dense indices follow ascending raw id.
class IdMap {
public:
    IdMap() = default;

    template <typename Range>
    static IdMap from_ids(const Range& ids) {
        IdMap m;
        std::set<Id> unique(std::begin(ids), std::end(ids));
        m.raw_.assign(unique.begin(), unique.end());
        m.dense_.reserve(m.raw_.size());
        for (std::size_t i = 0; i < m.raw_.size(); ++i) m.dense_.emplace(m.raw_[i], static_cast<std::int32_t>(i));
        return m;
    }

    std::optional<std::int32_t> find(Id raw) const {
        auto it = dense_.find(raw);
        if (it == dense_.end()) return std::nullopt;
        return it->second;
    }
    std::int32_t at(Id raw) const { return dense_.at(raw); }
    Id raw(std::int32_t dense) const { return raw_.at(static_cast<std::size_t>(dense)); }
    std::size_t size() const noexcept { return raw_.size(); }
    const std::vector<Id>& raw_ids() const noexcept { return raw_; }

private:
    std::vector<Id> raw_;
    std::unordered_map<Id, std::int32_t> dense_;
};

/// Dense entity indices for one stored interaction.
struct EntityKeys {
    std::int32_t user = 0;
    std::int32_t question = 0;
    std::int32_t group = 0;
    std::int32_t quiz = 0;
};

struct Orphan {
    std::size_t row = 0;
    bool missing_question = false;
    bool missing_student = false;
};

/// Immutable, chronologically sorted interaction store with entity indices.
class Dataset {
public:
    Dataset() = default;

    std::size_t size() const noexcept { return interactions_.size(); }
    bool empty() const noexcept { return interactions_.empty(); }

    const std::vector<Interaction>& interactions() const noexcept { return interactions_; }
    const Interaction& operator[](std::size_t row) const { return interactions_[row]; }
    const EntityKeys& keys(std::size_t row) const { return keys_[row]; }

    const std::map<Id, QuestionMeta>& questions() const noexcept { return questions_; }
    const std::map<Id, StudentMeta>& students() const noexcept { return students_; }
    const SkillTree& skills() const noexcept { return skills_; }

    const QuestionMeta* question_meta(Id question_id) const {
        auto it = questions_.find(question_id);
        return it == questions_.end() ? nullptr : &it->second;
    }
    const StudentMeta* student_meta(Id user_id) const {
        auto it = students_.find(user_id);
        return it == students_.end() ? nullptr : &it->second;
    }

    const IdMap& user_ids() const noexcept { return users_; }
    const IdMap& question_ids() const noexcept { return question_ids_; }
    const IdMap& group_ids() const noexcept { return groups_; }
    const IdMap& quiz_ids() const noexcept { return quizzes_; }

    /// Rows of one entity in global chronological order.
    std::span<const std::size_t> rows_of_user(std::int32_t dense) const { return by_user_.at(dense); }
    std::span<const std::size_t> rows_of_question(std::int32_t dense) const { return by_question_.at(dense); }
    std::span<const std::size_t> rows_of_group(std::int32_t dense) const { return by_group_.at(dense); }
    std::span<const std::size_t> rows_of_quiz(std::int32_t dense) const { return by_quiz_.at(dense); }

    const std::vector<Orphan>& orphans() const noexcept { return orphans_; }

    std::optional<std::size_t> row_of_answer(Id answer_id) const {
        auto it = row_by_answer_.find(answer_id);
        if (it == row_by_answer_.end()) return std::nullopt;
        return it->second;
    }

    /// First listed skill path of a question; empty span when unknown.
    std::span<const Id> skill_path(Id question_id) const {
        const auto* q = question_meta(question_id);
        return q ? std::span<const Id>(q->skill_path) : std::span<const Id>();
    }

    friend Dataset build_dataset(std::vector<Interaction>, std::vector<QuestionMeta>, std::vector<StudentMeta>,
                                 SkillTree);

private:
    std::vector<Interaction> interactions_;
    std::vector<EntityKeys> keys_;
    std::map<Id, QuestionMeta> questions_;
    std::map<Id, StudentMeta> students_;
    SkillTree skills_;
    IdMap users_, question_ids_, groups_, quizzes_;
    std::vector<std::vector<std::size_t>> by_user_, by_question_, by_group_, by_quiz_;
    std::vector<Orphan> orphans_;
    std::unordered_map<Id, std::size_t> row_by_answer_;
};

/// Sorts, validates and indexes the inputs. Orphan rows are kept and listed.
inline Dataset build_dataset(std::vector<Interaction> interactions, std::vector<QuestionMeta> questions,
                             std::vector<StudentMeta> students, SkillTree skills) {
    Dataset ds;
    for (const auto& x : interactions) {
        if (x.user_id < 0 || x.question_id < 0 || x.answer_id < 0 || x.group_id < 0 || x.quiz_id < 0) {
            throw ValidationError("negative id in answer " + std::to_string(x.answer_id));
        }
        if (x.timestamp <= 0) throw ValidationError("non-positive timestamp in answer " + std::to_string(x.answer_id));
        if ((x.is_correct == 1) != (x.chosen_option == x.correct_option) || x.is_correct > 1) {
            throw ValidationError("correctness flag disagrees with options in answer " + std::to_string(x.answer_id));
        }
    }
    sort_chronologically(interactions);
    ds.row_by_answer_.reserve(interactions.size());
    for (std::size_t i = 0; i < interactions.size(); ++i) {
        if (!ds.row_by_answer_.emplace(interactions[i].answer_id, i).second) {
            throw ValidationError("duplicate answer_id " + std::to_string(interactions[i].answer_id));
        }
    }

    for (auto& q : questions) {
        if (q.skill_path.empty()) {
            throw ValidationError("question " + std::to_string(q.question_id) + " has an empty skill path");
        }
        if (!skills.is_root_path(q.skill_path)) {
            throw ValidationError("question " + std::to_string(q.question_id) +
                                  " has a skill path that is not a root path of the skill tree");
        }
        const Id qid = q.question_id;
        if (!ds.questions_.emplace(qid, std::move(q)).second) {
            throw ValidationError("duplicate question metadata for " + std::to_string(qid));
        }
    }
    for (auto& s : students) {
        const Id uid = s.user_id;
        if (!ds.students_.emplace(uid, std::move(s)).second) {
            throw ValidationError("duplicate student metadata for " + std::to_string(uid));
        }
    }
    ds.skills_ = std::move(skills);

    std::vector<Id> users, qs, groups, quizzes;
    users.reserve(interactions.size() + ds.students_.size());
    qs.reserve(interactions.size() + ds.questions_.size());
    for (const auto& x : interactions) {
        users.push_back(x.user_id);
        qs.push_back(x.question_id);
        groups.push_back(x.group_id);
        quizzes.push_back(x.quiz_id);
    }
    for (const auto& [id, _] : ds.students_) users.push_back(id);
    for (const auto& [id, _] : ds.questions_) qs.push_back(id);
    ds.users_ = IdMap::from_ids(users);
    ds.question_ids_ = IdMap::from_ids(qs);
    ds.groups_ = IdMap::from_ids(groups);
    ds.quizzes_ = IdMap::from_ids(quizzes);

    ds.by_user_.assign(ds.users_.size(), {});
    ds.by_question_.assign(ds.question_ids_.size(), {});
    ds.by_group_.assign(ds.groups_.size(), {});
    ds.by_quiz_.assign(ds.quizzes_.size(), {});
    ds.keys_.reserve(interactions.size());
    for (std::size_t i = 0; i < interactions.size(); ++i) {
        const auto& x = interactions[i];
        EntityKeys k{ds.users_.at(x.user_id), ds.question_ids_.at(x.question_id), ds.groups_.at(x.group_id),
                     ds.quizzes_.at(x.quiz_id)};
        ds.keys_.push_back(k);
        ds.by_user_[k.user].push_back(i);
        ds.by_question_[k.question].push_back(i);
        ds.by_group_[k.group].push_back(i);
        ds.by_quiz_[k.quiz].push_back(i);
        const bool no_q = !ds.questions_.contains(x.question_id);
        const bool no_s = !ds.students_.contains(x.user_id);
        if (no_q || no_s) ds.orphans_.push_back({i, no_q, no_s});
    }
    ds.interactions_ = std::move(interactions);
    return ds;
}

/// Invariant violations that are reported rather than rejected at build time.
inline std::vector<std::string> validate(const Dataset& ds) {
    std::vector<std::string> problems;
    const auto& rows = ds.interactions();
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (!chronological_less(rows[i - 1], rows[i])) problems.push_back("rows out of order at " + std::to_string(i));
    }
    for (const auto& x : rows) {
        if ((x.is_correct == 1) != (x.chosen_option == x.correct_option)) {
            problems.push_back("inconsistent correctness in answer " + std::to_string(x.answer_id));
        }
        if (x.timestamp <= 0) problems.push_back("non-positive timestamp in answer " + std::to_string(x.answer_id));
        if (const auto* s = ds.student_meta(x.user_id); s && s->dob) {
            if (to_epoch_seconds(*s->dob) >= x.timestamp) {
                problems.push_back("dob not before answer " + std::to_string(x.answer_id));
            }
        }
    }
    for (const auto& [id, q] : ds.questions()) {
        if (!ds.skills().is_root_path(q.skill_path)) problems.push_back("bad skill path for question " + std::to_string(id));
    }
    return problems;
}

enum class Split : std::uint8_t { train = 0, validation = 1, test = 2 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test: return "test";
    }
    return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "validation") return Split::validation;
    if (s == "test") return Split::test;
    return std::nullopt;
}

struct SplitLabel {
    std::unordered_map<Id, Split> assignment;

    Split of(Id answer_id) const { return assignment.at(answer_id); }

    /// Labels aligned with dataset row order.
    std::vector<Split> per_row(const Dataset& ds) const {
        std::vector<Split> out;
        out.reserve(ds.size());
        for (const auto& x : ds.interactions()) {
            auto it = assignment.find(x.answer_id);
            if (it == assignment.end()) {
                throw ValidationError("answer " + std::to_string(x.answer_id) + " has no split label");
            }
            out.push_back(it->second);
        }
        return out;
    }
};

struct SplitFractions {
    double train = 0.8;
    double validation = 0.1;
    double test = 0.1;
};

/// Hash-based assignment per answer_id, so the result ignores input order.
inline SplitLabel split_random(const Dataset& ds, SplitFractions f, std::uint64_t seed) {
    if (ds.size() < 3) throw ValidationError("split_random needs at least 3 interactions");
    if (f.train < 0 || f.validation < 0 || f.test < 0) throw ValidationError("split fractions must be non-negative");
    if (std::abs(f.train + f.validation + f.test - 1.0) > 1e-9) {
        throw ValidationError("split fractions must sum to 1");
    }
    SplitLabel out;
    out.assignment.reserve(ds.size());
    const std::uint64_t salt = mix64(seed ^ 0x5eed5917ULL);
    for (const auto& x : ds.interactions()) {
        const double u = to_unit(hash_combine(salt, static_cast<std::uint64_t>(x.answer_id)));
        Split s = Split::test;
        if (u < f.train) {
            s = Split::train;
        } else if (u < f.train + f.validation) {
            s = Split::validation;
        }
        out.assignment.emplace(x.answer_id, s);
    }
    return out;
}

}  // namespace kt
