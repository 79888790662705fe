#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <vector>

#include "kt/binary_io.hpp"
#include "kt/error.hpp"
#include "kt/features/features.hpp"
#include "kt/math.hpp"

namespace kt {

struct BayesGlmParams {
    double prior_variance = 1.0;
    double tol = 1e-6;
    int max_iter = 500;
};

/// Log posterior of logistic regression under an N(0, s2) weight prior.
/// Parameter layout: [intercept, w_1 .. w_d]; the intercept is unpenalized.
class LogisticMapObjective {
public:
    LogisticMapObjective(Eigen::MatrixXd x, Eigen::VectorXd y, double prior_variance)
        : x_(std::move(x)), y_(std::move(y)), s2_(prior_variance) {
        if (!(s2_ > 0)) throw ValidationError("bayes_glm: prior variance must be positive");
    }

    Eigen::Index dim() const { return x_.cols() + 1; }

    double value(const Eigen::VectorXd& beta) const {
        const Eigen::VectorXd z = linear(beta);
        double s = 0.0;
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            // y log s(z) + (1 - y) log(1 - s(z)) = y z - log(1 + e^z)
            const double zi = z[i];
            const double softplus = zi > 0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi));
            s += y_[i] * zi - softplus;
        }
        return s - beta.tail(x_.cols()).squaredNorm() / (2.0 * s2_);
    }

    Eigen::VectorXd gradient(const Eigen::VectorXd& beta) const {
        const Eigen::VectorXd r = y_ - probabilities(beta);
        Eigen::VectorXd g(dim());
        g[0] = r.sum();
        g.tail(x_.cols()) = x_.transpose() * r - beta.tail(x_.cols()) / s2_;
        return g;
    }

    /// Negative Hessian (positive definite).
    Eigen::MatrixXd curvature(const Eigen::VectorXd& beta) const {
        const Eigen::VectorXd p = probabilities(beta);
        const Eigen::VectorXd w = (p.array() * (1.0 - p.array())).matrix();
        const Eigen::Index d = x_.cols();
        Eigen::MatrixXd h(dim(), dim());
        h(0, 0) = w.sum();
        const Eigen::VectorXd xw = x_.transpose() * w;
        h.block(1, 0, d, 1) = xw;
        h.block(0, 1, 1, d) = xw.transpose();
        h.block(1, 1, d, d) = x_.transpose() * w.asDiagonal() * x_;
        h.block(1, 1, d, d).diagonal().array() += 1.0 / s2_;
        return h;
    }

private:
    Eigen::VectorXd linear(const Eigen::VectorXd& beta) const {
        return (x_ * beta.tail(x_.cols())).array() + beta[0];
    }
    Eigen::VectorXd probabilities(const Eigen::VectorXd& beta) const {
        Eigen::VectorXd z = linear(beta);
        for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = logistic(z[i]);
        return z;
    }

    Eigen::MatrixXd x_;
    Eigen::VectorXd y_;
    double s2_;
};

/// MAP logistic regression on internally standardized features.
struct BayesGlmModel {
    std::size_t width = 0;
    std::vector<double> mean, sd;  // sd of a constant column is stored as 1
    double intercept = 0.0;
    std::vector<double> weights;   // on the standardized scale
    double prior_variance = 1.0;
    int iterations = 0;
    double gradient_norm = 0.0;    // infinity norm at the returned point
    bool converged = false;

    double predict(std::span<const double> row) const {
        if (row.size() != width) {
            throw ValidationError("bayes_glm: row width " + std::to_string(row.size()) + " != model width " +
                                  std::to_string(width));
        }
        double z = intercept;
        for (std::size_t f = 0; f < width; ++f) z += weights[f] * (row[f] - mean[f]) / sd[f];
        return clamp_probability(logistic(z));
    }

    std::vector<double> predict(const FeatureTable& table) const {
        std::vector<double> out(table.rows());
        for (std::size_t i = 0; i < table.rows(); ++i) out[i] = predict(table.row(i));
        return out;
    }

    void encode(ByteWriter& w) const {
        w.put<std::uint64_t>(width);
        w.put_vector(mean);
        w.put_vector(sd);
        w.put<double>(intercept);
        w.put_vector(weights);
        w.put<double>(prior_variance);
        w.put<std::int32_t>(iterations);
        w.put<double>(gradient_norm);
        w.put<std::uint8_t>(converged);
    }

    static BayesGlmModel decode(ByteReader& r) {
        BayesGlmModel m;
        m.width = r.get<std::uint64_t>();
        m.mean = r.get_vector<double>();
        m.sd = r.get_vector<double>();
        m.intercept = r.get<double>();
        m.weights = r.get_vector<double>();
        m.prior_variance = r.get<double>();
        m.iterations = r.get<std::int32_t>();
        m.gradient_norm = r.get<double>();
        m.converged = r.get<std::uint8_t>() != 0;
        return m;
    }
};

struct StandardizedDesign {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
    std::vector<double> mean, sd;
};

inline StandardizedDesign standardize_design(const FeatureTable& t) {
    const auto n = static_cast<Eigen::Index>(t.rows());
    const auto d = static_cast<Eigen::Index>(t.width());
    StandardizedDesign s;
    s.x.resize(n, d);
    s.y.resize(n);
    s.mean.assign(d, 0.0);
    s.sd.assign(d, 1.0);
    for (Eigen::Index i = 0; i < n; ++i) {
        s.y[i] = t.labels[i];
        for (Eigen::Index f = 0; f < d; ++f) s.mean[f] += t.at(i, f);
    }
    for (auto& m : s.mean) m /= static_cast<double>(n);
    for (Eigen::Index f = 0; f < d; ++f) {
        double var = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) var += (t.at(i, f) - s.mean[f]) * (t.at(i, f) - s.mean[f]);
        const double sd = std::sqrt(var / static_cast<double>(n));
        if (sd > 1e-12) s.sd[f] = sd;
        for (Eigen::Index i = 0; i < n; ++i) s.x(i, f) = (t.at(i, f) - s.mean[f]) / s.sd[f];
    }
    return s;
}

inline BayesGlmModel train_bglm(const FeatureTable& train, const BayesGlmParams& params = {}) {
    if (train.rows() == 0) throw ValidationError("bayes_glm: empty training table");
    if (!(params.tol > 0) || params.max_iter < 1) throw ValidationError("bayes_glm: invalid tolerance or max_iter");
    auto design = standardize_design(train);
    const LogisticMapObjective obj(design.x, design.y, params.prior_variance);

    BayesGlmModel m;
    m.width = train.width();
    m.mean = design.mean;
    m.sd = design.sd;
    m.prior_variance = params.prior_variance;

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(obj.dim());
    double f = obj.value(beta);
    Eigen::VectorXd g = obj.gradient(beta);
    int it = 0;
    while (g.lpNorm<Eigen::Infinity>() > params.tol && it < params.max_iter) {
        ++it;
        const Eigen::VectorXd step = obj.curvature(beta).ldlt().solve(g);
        double t = 1.0;
        Eigen::VectorXd next = beta + step;
        double fn = obj.value(next);
        while (!(fn >= f) && t > 1e-10) {
            t *= 0.5;
            next = beta + t * step;
            fn = obj.value(next);
        }
        if (!(fn >= f)) break;  // no ascent possible at machine precision
        beta = next;
        f = fn;
        g = obj.gradient(beta);
    }
    m.iterations = it;
    m.gradient_norm = g.lpNorm<Eigen::Infinity>();
    m.converged = m.gradient_norm <= params.tol;
    m.intercept = beta[0];
    m.weights.assign(beta.data() + 1, beta.data() + beta.size());
    return m;
}

}  // namespace kt
