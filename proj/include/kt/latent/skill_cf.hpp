#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "kt/binary_io.hpp"
#include "kt/core/dataset.hpp"
#include "kt/math.hpp"
#include "kt/parallel.hpp"
#include "kt/rng.hpp"

namespace kt {

/// Sparse user x leaf-skill table of (success, total) over training rows.
struct SkillMatrix {
    std::vector<Id> users;   // raw ids, ascending
    std::vector<Id> skills;  // raw leaf skill ids, ascending
    struct Cell {
        std::int32_t user = 0;
        std::int32_t skill = 0;
        double success = 0.0;
        double total = 0.0;
        double mean() const { return success / total; }
    };
    std::vector<Cell> cells;  // sorted by (user, skill); only observed cells

    std::optional<std::int32_t> user_index(Id raw) const { return index_of(users, raw); }
    std::optional<std::int32_t> skill_index(Id raw) const { return index_of(skills, raw); }

    const Cell* cell(std::int32_t u, std::int32_t s) const {
        auto it = std::lower_bound(cells.begin(), cells.end(), std::pair{u, s},
                                   [](const Cell& c, const std::pair<std::int32_t, std::int32_t>& k) {
                                       return std::pair{c.user, c.skill} < k;
                                   });
        return it != cells.end() && it->user == u && it->skill == s ? &*it : nullptr;
    }
    bool observed(std::int32_t u, std::int32_t s) const { return cell(u, s) != nullptr; }

private:
    static std::optional<std::int32_t> index_of(const std::vector<Id>& v, Id raw) {
        auto it = std::lower_bound(v.begin(), v.end(), raw);
        if (it == v.end() || *it != raw) return std::nullopt;
        return static_cast<std::int32_t>(it - v.begin());
    }
};

/// Leaf skill of a question: the last node of its skill path.
inline std::optional<Id> leaf_skill(const Dataset& ds, Id question) {
    const auto path = ds.skill_path(question);
    if (path.empty()) return std::nullopt;
    return path.back();
}

inline SkillMatrix build_skill_matrix(const Dataset& ds, std::span<const std::size_t> rows) {
    std::map<std::pair<Id, Id>, std::pair<double, double>> acc;
    for (auto r : rows) {
        const auto& x = ds[r];
        const auto leaf = leaf_skill(ds, x.question_id);
        if (!leaf) continue;
        auto& c = acc[{x.user_id, *leaf}];
        c.first += x.is_correct;
        c.second += 1.0;
    }
    SkillMatrix m;
    std::set<Id> us, ss;
    for (const auto& [k, v] : acc) {
        us.insert(k.first);
        ss.insert(k.second);
    }
    m.users.assign(us.begin(), us.end());
    m.skills.assign(ss.begin(), ss.end());
    for (const auto& [k, v] : acc) {
        m.cells.push_back({*m.user_index(k.first), *m.skill_index(k.second), v.first, v.second});
    }
    std::sort(m.cells.begin(), m.cells.end(),
              [](const auto& a, const auto& b) { return std::pair{a.user, a.skill} < std::pair{b.user, b.skill}; });
    return m;
}

struct FactorParams {
    int k = 16;
    double lambda = 0.1;
    int iters = 50;
};

struct FactorModel {
    int k = 0;
    double lambda = 0.0;
    double mu = 0.0;
    Eigen::MatrixXd U;  // users x k
    Eigen::MatrixXd V;  // skills x k
    Eigen::VectorXd bu, bs;
    std::vector<double> objective;  // after every half-sweep; [0] is the initial value

    double reconstruct(std::int32_t u, std::int32_t s) const {
        double v = mu + bu[u] + bs[s];
        if (k > 0) v += U.row(u).dot(V.row(s));
        return v;
    }
};

inline constexpr double kReconstructionClip = 1e-4;

inline double als_objective(const SkillMatrix& m, const FactorModel& f) {
    double sse = 0.0;
    for (const auto& c : m.cells) {
        const double e = c.mean() - f.reconstruct(c.user, c.skill);
        sse += c.total * e * e;
    }
    return sse + f.lambda * (f.U.squaredNorm() + f.V.squaredNorm() + f.bu.squaredNorm() + f.bs.squaredNorm());
}

namespace als_detail {

// Solves one row block [b, x] of the weighted ridge problem against fixed opposite factors.
inline void solve_rows(const SkillMatrix& m, const std::vector<std::vector<std::size_t>>& by_row, bool user_side,
                       FactorModel& f, int workers) {
    const int k = f.k;
    Eigen::MatrixXd& self = user_side ? f.U : f.V;
    Eigen::VectorXd& self_b = user_side ? f.bu : f.bs;
    const Eigen::MatrixXd& other = user_side ? f.V : f.U;
    const Eigen::VectorXd& other_b = user_side ? f.bs : f.bu;
    parallel_for(by_row.size(), workers, [&](std::size_t r) {
        Eigen::MatrixXd A = Eigen::MatrixXd::Identity(k + 1, k + 1) * f.lambda;
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k + 1);
        Eigen::VectorXd z(k + 1);
        for (auto ci : by_row[r]) {
            const auto& c = m.cells[ci];
            const std::int32_t o = user_side ? c.skill : c.user;
            z[0] = 1.0;
            if (k > 0) z.tail(k) = other.row(o).transpose();
            A.noalias() += c.total * z * z.transpose();
            rhs.noalias() += c.total * (c.mean() - f.mu - other_b[o]) * z;
        }
        Eigen::VectorXd sol = Eigen::VectorXd::Zero(k + 1);
        if (!by_row[r].empty()) {
            // a singular system only arises with lambda = 0; fall back to the minimum-norm solution
            Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
            if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.vectorD().minCoeff() > 1e-14) {
                sol = ldlt.solve(rhs);
            } else {
                sol = A.completeOrthogonalDecomposition().solve(rhs);
            }
        }
        self_b[static_cast<Eigen::Index>(r)] = sol[0];
        if (k > 0) self.row(static_cast<Eigen::Index>(r)) = sol.tail(k).transpose();
    });
}

}  // namespace als_detail

/// Weighted ALS with biases; cell weights are response counts and mu is the weighted mean.
inline FactorModel factorize(const SkillMatrix& m, const FactorParams& p, std::uint64_t seed, int workers = 1) {
    if (m.cells.empty()) throw ValidationError("skill matrix has no observed cells");
    if (p.k < 0 || p.lambda < 0 || p.iters < 0) throw ValidationError("factorization parameters must be non-negative");
    FactorModel f;
    f.k = p.k;
    f.lambda = p.lambda;
    const auto nu = static_cast<Eigen::Index>(m.users.size());
    const auto ns = static_cast<Eigen::Index>(m.skills.size());
    double s = 0.0, w = 0.0;
    for (const auto& c : m.cells) {
        s += c.success;
        w += c.total;
    }
    f.mu = s / w;
    f.bu = Eigen::VectorXd::Zero(nu);
    f.bs = Eigen::VectorXd::Zero(ns);
    Rng rng(hash_combine(seed, 0x616c73));
    f.U.resize(nu, p.k);
    f.V.resize(ns, p.k);
    for (Eigen::Index i = 0; i < f.U.size(); ++i) f.U.data()[i] = rng.normal(0.0, 0.1);
    for (Eigen::Index i = 0; i < f.V.size(); ++i) f.V.data()[i] = rng.normal(0.0, 0.1);

    std::vector<std::vector<std::size_t>> by_user(m.users.size()), by_skill(m.skills.size());
    for (std::size_t i = 0; i < m.cells.size(); ++i) {
        by_user[m.cells[i].user].push_back(i);
        by_skill[m.cells[i].skill].push_back(i);
    }
    f.objective.push_back(als_objective(m, f));
    for (int it = 0; it < p.iters; ++it) {
        als_detail::solve_rows(m, by_user, true, f, workers);
        f.objective.push_back(als_objective(m, f));
        als_detail::solve_rows(m, by_skill, false, f, workers);
        f.objective.push_back(als_objective(m, f));
    }
    return f;
}

/// Fitted skill-profile model: the training matrix plus its factorization.
struct SkillCfModel {
    SkillMatrix matrix;
    FactorModel factors;
    double bypass_total = 20.0;

    enum class Source : std::uint8_t { reconstruction, observed, cold_user, unknown_skill };

    struct Prediction {
        double p = 0.5;
        Source source = Source::reconstruction;
        bool native() const { return source == Source::reconstruction || source == Source::observed; }
    };

    Prediction predict(Id user, std::optional<Id> leaf) const {
        auto clip = [](double v) { return std::clamp(v, kReconstructionClip, 1.0 - kReconstructionClip); };
        const auto s = leaf ? matrix.skill_index(*leaf) : std::nullopt;
        if (!s) return {clip(factors.mu), Source::unknown_skill};
        const auto u = matrix.user_index(user);
        if (!u) return {clip(factors.mu + factors.bs[*s]), Source::cold_user};
        if (const auto* c = matrix.cell(*u, *s); c && c->total >= bypass_total) {
            return {(c->success + 1.0) / (c->total + 2.0), Source::observed};
        }
        return {clip(factors.reconstruct(*u, *s)), Source::reconstruction};
    }

    void encode(ByteWriter& w) const {
        w.put_magic("KTCF");
        w.put_vector(matrix.users);
        w.put_vector(matrix.skills);
        w.put<std::uint64_t>(matrix.cells.size());
        for (const auto& c : matrix.cells) {
            w.put(c.user);
            w.put(c.skill);
            w.put(c.success);
            w.put(c.total);
        }
        w.put<std::int32_t>(factors.k);
        w.put(factors.lambda);
        w.put(factors.mu);
        auto put_mat = [&](const Eigen::MatrixXd& m) {
            w.put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
            w.put<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
            for (Eigen::Index i = 0; i < m.rows(); ++i) {
                for (Eigen::Index j = 0; j < m.cols(); ++j) w.put(m(i, j));
            }
        };
        put_mat(factors.U);
        put_mat(factors.V);
        put_mat(factors.bu);
        put_mat(factors.bs);
        w.put_vector(factors.objective);
        w.put(bypass_total);
    }

    static SkillCfModel decode(ByteReader& r) {
        r.expect_magic("KTCF");
        SkillCfModel m;
        m.matrix.users = r.get_vector<Id>();
        m.matrix.skills = r.get_vector<Id>();
        m.matrix.cells.resize(r.get<std::uint64_t>());
        for (auto& c : m.matrix.cells) {
            c.user = r.get<std::int32_t>();
            c.skill = r.get<std::int32_t>();
            c.success = r.get<double>();
            c.total = r.get<double>();
        }
        auto& f = m.factors;
        f.k = r.get<std::int32_t>();
        f.lambda = r.get<double>();
        f.mu = r.get<double>();
        auto get_mat = [&](auto& mat) {
            const auto rows = static_cast<Eigen::Index>(r.get<std::uint64_t>());
            const auto cols = static_cast<Eigen::Index>(r.get<std::uint64_t>());
            mat.resize(rows, cols);
            for (Eigen::Index i = 0; i < rows; ++i) {
                for (Eigen::Index j = 0; j < cols; ++j) mat(i, j) = r.get<double>();
            }
        };
        get_mat(f.U);
        get_mat(f.V);
        get_mat(f.bu);
        get_mat(f.bs);
        f.objective = r.get_vector<double>();
        m.bypass_total = r.get<double>();
        return m;
    }
};

inline SkillCfModel train_skill_cf(const Dataset& ds, std::span<const std::size_t> rows, const FactorParams& p,
                                   double bypass_total, std::uint64_t seed, int workers = 1) {
    SkillCfModel m;
    m.matrix = build_skill_matrix(ds, rows);
    m.factors = factorize(m.matrix, p, seed, workers);
    m.bypass_total = bypass_total;
    return m;
}

inline SkillCfModel::Prediction predict_skill_cf(const SkillCfModel& m, const Dataset& ds, Id user, Id question) {
    return m.predict(user, leaf_skill(ds, question));
}

}  // namespace kt
