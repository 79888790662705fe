#pragma once

#include <cmath>
#include <vector>

#include "kt/autodiff/tensor.hpp"

namespace kt::ad {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<std::vector<double>> m, v;
    long step = 0;
};

/// One bias-corrected Adam update using each parameter's accumulated grad.
inline void adam_step(const std::vector<Parameter*>& params, AdamState& state, const AdamConfig& cfg) {
    if (state.m.empty()) {
        for (const auto* p : params) {
            state.m.emplace_back(p->value.size(), 0.0);
            state.v.emplace_back(p->value.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam_step: parameter list changed between steps");
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        if (p.grad.size() != p.value.size() || state.m[i].size() != p.value.size()) {
            throw ShapeError("adam_step: shape mismatch for " + p.name);
        }
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            const double g = p.grad[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            p.value[j] -= cfg.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.eps);
        }
    }
}

}  // namespace kt::ad
