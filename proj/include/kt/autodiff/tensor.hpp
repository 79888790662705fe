#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "kt/error.hpp"
#include "kt/rng.hpp"

namespace kt::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream o;
    o << '(';
    for (std::size_t i = 0; i < s.size(); ++i) o << (i ? "," : "") << s[i];
    o << ')';
    return o.str();
}

/// Dense row-major f64 array.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(numel(shape), fill) {}
    Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != numel(shape)) {
            throw ShapeError("tensor: " + std::to_string(data.size()) + " values for shape " + shape_str(shape));
        }
    }

    std::size_t size() const noexcept { return data.size(); }
    std::size_t rank() const noexcept { return shape.size(); }
    std::size_t dim(int i) const { return shape[i < 0 ? shape.size() + i : static_cast<std::size_t>(i)]; }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }
};

/// Trainable tensor with a persistent gradient buffer.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

inline Tensor normal_tensor(Shape shape, double sd, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.normal(0.0, sd);
    return t;
}

}  // namespace kt::ad
