#pragma once

#include <algorithm>
#include <cmath>

namespace kt {

/// Numerically stable logistic function.
inline double logistic(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Probabilities emitted by models stay strictly inside (0,1).
inline constexpr double kProbabilityFloor = 1e-12;

inline double clamp_probability(double p) { return std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor); }

}  // namespace kt
