#pragma once

#include <map>
#include <set>
#include <vector>

#include "kt/binary_io.hpp"
#include "kt/core/dataset.hpp"
#include "kt/math.hpp"
#include "kt/parallel.hpp"

namespace kt {

struct IrtResponse {
    Id user = 0;
    Id question = 0;
    int correct = 0;
};

struct IrtPriors {
    double theta_sd = 1.0;
    double b_sd = 1.0;
    double log_a_sd = 0.5;
};

struct IrtFitParams {
    double tol = 1e-5;
    int max_iter = 200;
    IrtPriors priors;
};

struct ItemParams {
    double a = 1.0;
    double b = 0.0;
};

/// Dense working form of one quiz (or cluster) response matrix.
struct IrtProblem {
    std::vector<Id> users, questions;  // ascending raw ids
    std::vector<std::int32_t> u, q;    // per response
    std::vector<int> y;

    explicit IrtProblem(std::span<const IrtResponse> rs) {
        std::set<Id> us, qs;
        for (const auto& r : rs) {
            us.insert(r.user);
            qs.insert(r.question);
        }
        users.assign(us.begin(), us.end());
        questions.assign(qs.begin(), qs.end());
        for (const auto& r : rs) {
            u.push_back(static_cast<std::int32_t>(std::lower_bound(users.begin(), users.end(), r.user) - users.begin()));
            q.push_back(static_cast<std::int32_t>(std::lower_bound(questions.begin(), questions.end(), r.question) -
                                                  questions.begin()));
            y.push_back(r.correct ? 1 : 0);
        }
    }
    std::size_t size() const { return y.size(); }
};

inline double bernoulli_loglik(int y, double z) {
    // log sigma(z) = -log1p(exp(-z)), computed without overflow
    auto log_sigma = [](double v) { return v >= 0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v)); };
    return y ? log_sigma(z) : log_sigma(-z);
}

inline double irt_data_loglik(const IrtProblem& P, std::span<const double> theta, std::span<const double> a,
                              std::span<const double> b) {
    double s = 0.0;
    for (std::size_t r = 0; r < P.size(); ++r) s += bernoulli_loglik(P.y[r], a[P.q[r]] * (theta[P.u[r]] - b[P.q[r]]));
    return s;
}

inline double irt_log_prior(std::span<const double> theta, std::span<const double> a, std::span<const double> b,
                            const IrtPriors& pr) {
    double s = 0.0;
    for (double t : theta) s -= 0.5 * t * t / (pr.theta_sd * pr.theta_sd);
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double la = std::log(a[j]);
        s -= 0.5 * la * la / (pr.log_a_sd * pr.log_a_sd) + 0.5 * b[j] * b[j] / (pr.b_sd * pr.b_sd);
    }
    return s;
}

struct IrtGradient {
    std::vector<double> theta, a, b;
};

/// Gradient of the data log-likelihood in (theta, a, b).
inline IrtGradient irt_data_gradient(const IrtProblem& P, std::span<const double> theta, std::span<const double> a,
                                     std::span<const double> b) {
    IrtGradient g{std::vector<double>(theta.size()), std::vector<double>(a.size()), std::vector<double>(b.size())};
    for (std::size_t r = 0; r < P.size(); ++r) {
        const auto i = P.u[r];
        const auto j = P.q[r];
        const double e = P.y[r] - logistic(a[j] * (theta[i] - b[j]));
        g.theta[i] += a[j] * e;
        g.a[j] += (theta[i] - b[j]) * e;
        g.b[j] -= a[j] * e;
    }
    return g;
}

struct QuizIrtModel {
    Id key = 0;
    std::map<Id, double> theta;
    std::map<Id, ItemParams> items;
    std::vector<double> trace;  // penalized log-likelihood per iteration
    int iterations = 0;
    bool converged = false;
    bool degenerate = false;
};

/// Centers and scales theta to mean 0, sd 1 and rescales items so every a(theta - b) is unchanged.
inline void standardize_abilities(std::vector<double>& theta, std::vector<double>& a, std::vector<double>& b) {
    if (theta.size() < 2) return;
    double m = 0.0;
    for (double t : theta) m += t;
    m /= static_cast<double>(theta.size());
    double v = 0.0;
    for (double t : theta) v += (t - m) * (t - m);
    const double s = std::sqrt(v / static_cast<double>(theta.size()));
    if (!(s > 1e-12)) return;
    for (double& t : theta) t = (t - m) / s;
    for (std::size_t j = 0; j < a.size(); ++j) {
        a[j] *= s;
        b[j] = (b[j] - m) / s;
    }
}

namespace irt_detail {

inline double smoothed_logit(double s, double t) { return logit((s + 1.0) / (t + 2.0)); }

inline QuizIrtModel fallback_model(const IrtProblem& P) {
    std::vector<double> us(P.users.size()), ut(P.users.size()), qs(P.questions.size()), qt(P.questions.size());
    for (std::size_t r = 0; r < P.size(); ++r) {
        us[P.u[r]] += P.y[r];
        ut[P.u[r]] += 1;
        qs[P.q[r]] += P.y[r];
        qt[P.q[r]] += 1;
    }
    QuizIrtModel m;
    m.degenerate = true;
    for (std::size_t i = 0; i < P.users.size(); ++i) m.theta[P.users[i]] = smoothed_logit(us[i], ut[i]);
    for (std::size_t j = 0; j < P.questions.size(); ++j) m.items[P.questions[j]] = {1.0, -smoothed_logit(qs[j], qt[j])};
    return m;
}

}  // namespace irt_detail

/// MAP 2-PL by alternating blockwise Newton ascent with step halving. Abilities are kept
/// standardized; a theta update is accepted only if the objective after re-standardizing
/// does not drop, so the trace is non-decreasing.
inline QuizIrtModel fit_irt_quiz(std::span<const IrtResponse> responses, const IrtFitParams& prm = {}) {
    if (responses.empty()) throw ValidationError("IRT fit needs at least one response");
    const IrtProblem P(responses);
    const auto n = P.users.size();
    const auto m = P.questions.size();
    std::size_t correct = 0;
    for (int y : P.y) correct += static_cast<std::size_t>(y);
    if (n < 2 || m < 2 || correct == 0 || correct == P.size()) return irt_detail::fallback_model(P);

    const auto& pr = prm.priors;
    std::vector<std::vector<std::size_t>> by_user(n), by_item(m);
    for (std::size_t r = 0; r < P.size(); ++r) {
        by_user[P.u[r]].push_back(r);
        by_item[P.q[r]].push_back(r);
    }

    // start from smoothed proportions on the logit scale
    std::vector<double> theta(n), a(m, 1.0), b(m);
    {
        const auto fb = irt_detail::fallback_model(P);
        for (std::size_t i = 0; i < n; ++i) theta[i] = fb.theta.at(P.users[i]);
        for (std::size_t j = 0; j < m; ++j) b[j] = fb.items.at(P.questions[j]).b;
        standardize_abilities(theta, a, b);
    }
    auto objective = [&](const std::vector<double>& t, const std::vector<double>& aa, const std::vector<double>& bb) {
        return irt_data_loglik(P, t, aa, bb) + irt_log_prior(t, aa, bb, pr);
    };

    auto user_obj = [&](std::size_t i, double t) {
        double s = -0.5 * t * t / (pr.theta_sd * pr.theta_sd);
        for (auto r : by_user[i]) s += bernoulli_loglik(P.y[r], a[P.q[r]] * (t - b[P.q[r]]));
        return s;
    };
    auto item_obj = [&](std::size_t j, double la, double bj) {
        const double aj = std::exp(la);
        double s = -0.5 * la * la / (pr.log_a_sd * pr.log_a_sd) - 0.5 * bj * bj / (pr.b_sd * pr.b_sd);
        for (auto r : by_item[j]) s += bernoulli_loglik(P.y[r], aj * (theta[P.u[r]] - bj));
        return s;
    };

    QuizIrtModel out;
    double current = objective(theta, a, b);
    for (int it = 0; it < prm.max_iter; ++it) {
        // theta block: independent 1-D Newton per user
        std::vector<double> proposal = theta;
        for (std::size_t i = 0; i < n; ++i) {
            double g = -theta[i] / (pr.theta_sd * pr.theta_sd);
            double h = -1.0 / (pr.theta_sd * pr.theta_sd);
            for (auto r : by_user[i]) {
                const auto j = P.q[r];
                const double p = logistic(a[j] * (theta[i] - b[j]));
                g += a[j] * (P.y[r] - p);
                h -= a[j] * a[j] * p * (1.0 - p);
            }
            const double f0 = user_obj(i, theta[i]);
            double step = -g / h;
            for (int k = 0; k < 30; ++k, step *= 0.5) {
                if (user_obj(i, theta[i] + step) >= f0) {
                    proposal[i] = theta[i] + step;
                    break;
                }
            }
        }
        for (double t = 1.0; t > 1e-6; t *= 0.5) {
            std::vector<double> th(n), aa = a, bb = b;
            for (std::size_t i = 0; i < n; ++i) th[i] = theta[i] + t * (proposal[i] - theta[i]);
            standardize_abilities(th, aa, bb);
            const double f = objective(th, aa, bb);
            if (f >= current) {
                theta = std::move(th);
                a = std::move(aa);
                b = std::move(bb);
                current = f;
                break;
            }
        }

        // item block: 2-D Newton in (ln a, b) per item, gradient step when the Hessian is not negative definite
        for (std::size_t j = 0; j < m; ++j) {
            const double la = std::log(a[j]);
            double ga = -la / (pr.log_a_sd * pr.log_a_sd), gb = -b[j] / (pr.b_sd * pr.b_sd);
            double haa = -1.0 / (pr.log_a_sd * pr.log_a_sd), hbb = -1.0 / (pr.b_sd * pr.b_sd), hab = 0.0;
            for (auto r : by_item[j]) {
                const double z = a[j] * (theta[P.u[r]] - b[j]);
                const double p = logistic(z);
                const double e = P.y[r] - p;
                const double w = p * (1.0 - p);
                ga += e * z;
                gb -= e * a[j];
                haa += -w * z * z + e * z;
                hbb -= w * a[j] * a[j];
                hab += w * a[j] * z - e * a[j];
            }
            double da, db;
            const double det = haa * hbb - hab * hab;
            if (haa < 0 && det > 0) {
                da = -(hbb * ga - hab * gb) / det;
                db = -(-hab * ga + haa * gb) / det;
            } else {
                const double scale = 1.0 / (std::abs(haa) + std::abs(hbb) + 1.0);
                da = ga * scale;
                db = gb * scale;
            }
            const double f0 = item_obj(j, la, b[j]);
            for (int k = 0; k < 30; ++k, da *= 0.5, db *= 0.5) {
                if (item_obj(j, la + da, b[j] + db) >= f0) {
                    a[j] = std::exp(la + da);
                    b[j] += db;
                    break;
                }
            }
        }
        const double next = objective(theta, a, b);
        out.trace.push_back(next);
        out.iterations = it + 1;
        const double gain = next - current;
        current = next;
        if (it > 0 && gain < prm.tol) {
            out.converged = true;
            break;
        }
    }
    for (std::size_t i = 0; i < n; ++i) out.theta[P.users[i]] = theta[i];
    for (std::size_t j = 0; j < m; ++j) out.items[P.questions[j]] = {a[j], b[j]};
    return out;
}

enum class IrtFallback : std::uint8_t { none = 0, degenerate_model, theta_proxy, theta_zero, item_proxy, base_rate };

inline const char* irt_fallback_name(IrtFallback f) {
    switch (f) {
        case IrtFallback::none: return "none";
        case IrtFallback::degenerate_model: return "degenerate_model";
        case IrtFallback::theta_proxy: return "theta_proxy";
        case IrtFallback::theta_zero: return "theta_zero";
        case IrtFallback::item_proxy: return "item_proxy";
        case IrtFallback::base_rate: return "base_rate";
    }
    return "?";
}

struct IrtPrediction {
    double p = 0.5;
    IrtFallback fallback = IrtFallback::none;
};

/// Per-quiz or per-cluster 2-PL models with the global proxies used for fallbacks.
struct IrtStore {
    enum class Keying : std::uint8_t { quiz = 0, cluster = 1 };
    Keying keying = Keying::quiz;
    std::map<Id, QuizIrtModel> models;
    std::map<Id, Id> cluster_of_question;  // cluster keying only
    std::map<Id, double> user_ability;     // logit of smoothed overall correctness
    std::map<Id, double> question_difficulty;
    double base_rate = 0.5;

    std::optional<Id> key_for(Id question, Id quiz) const {
        if (keying == Keying::quiz) return quiz;
        auto it = cluster_of_question.find(question);
        if (it == cluster_of_question.end()) return std::nullopt;
        return it->second;
    }

    void encode(ByteWriter& w) const {
        w.put_magic("KTIR");
        w.put<std::uint8_t>(static_cast<std::uint8_t>(keying));
        w.put(base_rate);
        auto put_map = [&](const std::map<Id, double>& mp) {
            w.put<std::uint64_t>(mp.size());
            for (const auto& [k, v] : mp) {
                w.put(k);
                w.put(v);
            }
        };
        put_map(user_ability);
        put_map(question_difficulty);
        w.put<std::uint64_t>(cluster_of_question.size());
        for (const auto& [q, c] : cluster_of_question) {
            w.put(q);
            w.put(c);
        }
        w.put<std::uint64_t>(models.size());
        for (const auto& [k, mdl] : models) {
            w.put(k);
            w.put<std::uint8_t>(mdl.degenerate);
            w.put<std::uint8_t>(mdl.converged);
            w.put<std::int32_t>(mdl.iterations);
            w.put_vector(mdl.trace);
            put_map(mdl.theta);
            w.put<std::uint64_t>(mdl.items.size());
            for (const auto& [q, it] : mdl.items) {
                w.put(q);
                w.put(it.a);
                w.put(it.b);
            }
        }
    }

    static IrtStore decode(ByteReader& r) {
        r.expect_magic("KTIR");
        IrtStore s;
        s.keying = static_cast<Keying>(r.get<std::uint8_t>());
        s.base_rate = r.get<double>();
        auto get_map = [&](std::map<Id, double>& mp) {
            const auto n = r.get<std::uint64_t>();
            for (std::uint64_t i = 0; i < n; ++i) {
                const Id k = r.get<Id>();
                mp[k] = r.get<double>();
            }
        };
        get_map(s.user_ability);
        get_map(s.question_difficulty);
        for (auto n = r.get<std::uint64_t>(); n > 0; --n) {
            const Id q = r.get<Id>();
            s.cluster_of_question[q] = r.get<Id>();
        }
        for (auto n = r.get<std::uint64_t>(); n > 0; --n) {
            const Id k = r.get<Id>();
            auto& mdl = s.models[k];
            mdl.key = k;
            mdl.degenerate = r.get<std::uint8_t>() != 0;
            mdl.converged = r.get<std::uint8_t>() != 0;
            mdl.iterations = r.get<std::int32_t>();
            mdl.trace = r.get_vector<double>();
            get_map(mdl.theta);
            for (auto ni = r.get<std::uint64_t>(); ni > 0; --ni) {
                const Id q = r.get<Id>();
                const double a = r.get<double>();
                mdl.items[q] = {a, r.get<double>()};
            }
        }
        return s;
    }
};

/// sigma(a(theta - b)) with the documented fallback chain; the most severe fallback used is reported.
inline IrtPrediction predict_irt(const IrtStore& store, Id user, Id question, Id quiz) {
    const QuizIrtModel* mdl = nullptr;
    if (const auto key = store.key_for(question, quiz)) {
        auto it = store.models.find(*key);
        if (it != store.models.end()) mdl = &it->second;
    }
    IrtFallback worst = mdl && mdl->degenerate ? IrtFallback::degenerate_model : IrtFallback::none;
    auto note = [&](IrtFallback f) { worst = std::max(worst, f); };

    std::optional<ItemParams> item;
    if (mdl) {
        if (auto it = mdl->items.find(question); it != mdl->items.end()) item = it->second;
    }
    if (!item) {
        auto it = store.question_difficulty.find(question);
        if (it == store.question_difficulty.end()) return {store.base_rate, IrtFallback::base_rate};
        item = ItemParams{1.0, it->second};
        note(IrtFallback::item_proxy);
    }
    double theta = 0.0;
    bool have_theta = false;
    if (mdl) {
        if (auto it = mdl->theta.find(user); it != mdl->theta.end()) {
            theta = it->second;
            have_theta = true;
        }
    }
    if (!have_theta) {
        if (auto it = store.user_ability.find(user); it != store.user_ability.end()) {
            theta = it->second;
            note(IrtFallback::theta_proxy);
        } else {
            note(IrtFallback::theta_zero);
        }
    }
    return {clamp_probability(logistic(item->a * (theta - item->b))), worst};
}

/// Fits one model per key over the given training rows; keys come from quiz ids or from
/// the question clustering.
inline IrtStore fit_irt_store(const Dataset& ds, std::span<const std::size_t> rows, IrtStore::Keying keying,
                              const std::map<Id, Id>& cluster_of_question, const IrtFitParams& prm, int workers = 1) {
    IrtStore store;
    store.keying = keying;
    store.cluster_of_question = keying == IrtStore::Keying::cluster ? cluster_of_question : std::map<Id, Id>{};
    std::map<Id, std::vector<IrtResponse>> groups;
    std::map<Id, std::pair<double, double>> us, qs;
    double s = 0.0;
    for (auto r : rows) {
        const auto& x = ds[r];
        s += x.is_correct;
        us[x.user_id].first += x.is_correct;
        us[x.user_id].second += 1;
        qs[x.question_id].first += x.is_correct;
        qs[x.question_id].second += 1;
        if (const auto key = store.key_for(x.question_id, x.quiz_id)) {
            groups[*key].push_back({x.user_id, x.question_id, x.is_correct});
        }
    }
    store.base_rate = rows.empty() ? 0.5 : clamp_probability(s / static_cast<double>(rows.size()));
    for (const auto& [u, c] : us) store.user_ability[u] = irt_detail::smoothed_logit(c.first, c.second);
    for (const auto& [q, c] : qs) store.question_difficulty[q] = -irt_detail::smoothed_logit(c.first, c.second);

    std::vector<Id> keys;
    for (const auto& [k, v] : groups) keys.push_back(k);
    std::vector<QuizIrtModel> fitted(keys.size());
    parallel_for(keys.size(), workers, [&](std::size_t i) {
        fitted[i] = fit_irt_quiz(groups.at(keys[i]), prm);
        fitted[i].key = keys[i];
    });
    for (auto& f : fitted) store.models.emplace(f.key, std::move(f));
    return store;
}

}  // namespace kt
