#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include "kt/autodiff/tensor.hpp"

namespace kt::ad {

using Var = int;

/// Dynamic reverse-mode tape. Ops record their outputs in creation order,
/// which is a topological order; backward walks it once in reverse.
class Tape {
public:
    Var constant(Tensor t) { return push(std::move(t), false, {}); }

    /// Leaf with its own gradient slot (no Parameter behind it).
    Var input(Tensor t) { return push(std::move(t), true, {}); }

    /// Leaf bound to a parameter; backward adds into p.grad.
    Var param(Parameter& p) {
        const Var v = push(p.value, true, {});
        nodes_[v].param = &p;
        return v;
    }

    const Tensor& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v)).value; }
    const Tensor& grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v)).grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // ---- primitives ----

    /// (..., m, k) x (..., k, n) with equal leading dims, or x (k, n) shared across the batch.
    Var matmul(Var a, Var b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.rank() < 2 || B.rank() < 2 || A.dim(-1) != B.dim(-2)) fail("matmul", A, B);
        const bool shared = B.rank() == 2;
        if (!shared && (A.rank() != B.rank() || !std::equal(A.shape.begin(), A.shape.end() - 2, B.shape.begin()))) {
            fail("matmul", A, B);
        }
        const std::size_t m = A.dim(-2), k = A.dim(-1), n = B.dim(-1);
        const std::size_t batch = A.size() / (m * k);
        Shape os = A.shape;
        os.back() = n;
        Tensor C(os);
        if (shared) {
            mat(C.data.data(), batch * m, n).noalias() = cmat(A.data.data(), batch * m, k) * cmat(B.data.data(), k, n);
        } else {
            for (std::size_t i = 0; i < batch; ++i) {
                mat(C.data.data() + i * m * n, m, n).noalias() =
                    cmat(A.data.data() + i * m * k, m, k) * cmat(B.data.data() + i * k * n, k, n);
            }
        }
        return push(std::move(C), needs(a) || needs(b), [=](Tape& t, Var out) {
            const double* dC = t.nodes_[out].grad.data.data();
            const double* Av = t.nodes_[a].value.data.data();
            const double* Bv = t.nodes_[b].value.data.data();
            if (t.needs(a)) {
                double* dA = t.nodes_[a].grad.data.data();
                if (shared) {
                    mat(dA, batch * m, k).noalias() += cmat(dC, batch * m, n) * cmat(Bv, k, n).transpose();
                } else {
                    for (std::size_t i = 0; i < batch; ++i) {
                        mat(dA + i * m * k, m, k).noalias() +=
                            cmat(dC + i * m * n, m, n) * cmat(Bv + i * k * n, k, n).transpose();
                    }
                }
            }
            if (t.needs(b)) {
                double* dB = t.nodes_[b].grad.data.data();
                if (shared) {
                    mat(dB, k, n).noalias() += cmat(Av, batch * m, k).transpose() * cmat(dC, batch * m, n);
                } else {
                    for (std::size_t i = 0; i < batch; ++i) {
                        mat(dB + i * k * n, k, n).noalias() +=
                            cmat(Av + i * m * k, m, k).transpose() * cmat(dC + i * m * n, m, n);
                    }
                }
            }
        });
    }

    /// a + b where b's shape is a suffix of a's (broadcast over leading dims).
    Var add(Var a, Var b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!is_suffix(B.shape, A.shape)) fail("add", A, B);
        Tensor C = A;
        const std::size_t nb = B.size();
        for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i % nb];
        return push(std::move(C), needs(a) || needs(b), [=](Tape& t, Var out) {
            const auto& dC = t.nodes_[out].grad.data;
            if (t.needs(a)) {
                auto& dA = t.nodes_[a].grad.data;
                for (std::size_t i = 0; i < dC.size(); ++i) dA[i] += dC[i];
            }
            if (t.needs(b)) {
                auto& dB = t.nodes_[b].grad.data;
                for (std::size_t i = 0; i < dC.size(); ++i) dB[i % nb] += dC[i];
            }
        });
    }

    /// Elementwise a * b with the same suffix broadcast as add.
    Var mul(Var a, Var b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!is_suffix(B.shape, A.shape)) fail("mul", A, B);
        Tensor C = A;
        const std::size_t nb = B.size();
        for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i % nb];
        return push(std::move(C), needs(a) || needs(b), [=](Tape& t, Var out) {
            const auto& dC = t.nodes_[out].grad.data;
            const auto& Av = t.nodes_[a].value.data;
            const auto& Bv = t.nodes_[b].value.data;
            if (t.needs(a)) {
                auto& dA = t.nodes_[a].grad.data;
                for (std::size_t i = 0; i < dC.size(); ++i) dA[i] += dC[i] * Bv[i % nb];
            }
            if (t.needs(b)) {
                auto& dB = t.nodes_[b].grad.data;
                for (std::size_t i = 0; i < dC.size(); ++i) dB[i % nb] += dC[i] * Av[i];
            }
        });
    }

    Var scale(Var a, double c) {
        Tensor C = value(a);
        for (auto& v : C.data) v *= c;
        return push(std::move(C), needs(a), [=](Tape& t, Var out) {
            const auto& dC = t.nodes_[out].grad.data;
            auto& dA = t.nodes_[a].grad.data;
            for (std::size_t i = 0; i < dC.size(); ++i) dA[i] += c * dC[i];
        });
    }

    /// Swaps the last two dims.
    Var transpose(Var a) {
        const Tensor& A = value(a);
        if (A.rank() < 2) throw ShapeError("transpose: needs rank >= 2, got " + shape_str(A.shape));
        const std::size_t r = A.dim(-2), c = A.dim(-1), batch = A.size() / (r * c);
        Shape os = A.shape;
        std::swap(os[os.size() - 1], os[os.size() - 2]);
        Tensor C(os);
        for (std::size_t b = 0; b < batch; ++b) {
            mat(C.data.data() + b * r * c, c, r) = cmat(A.data.data() + b * r * c, r, c).transpose();
        }
        return push(std::move(C), needs(a), [=](Tape& t, Var out) {
            const double* dC = t.nodes_[out].grad.data.data();
            double* dA = t.nodes_[a].grad.data.data();
            for (std::size_t b = 0; b < batch; ++b) {
                mat(dA + b * r * c, r, c) += cmat(dC + b * r * c, c, r).transpose();
            }
        });
    }

    Var reshape(Var a, Shape shape) {
        const Tensor& A = value(a);
        if (numel(shape) != A.size()) {
            throw ShapeError("reshape: cannot view " + shape_str(A.shape) + " as " + shape_str(shape));
        }
        return push(Tensor(std::move(shape), A.data), needs(a), [=](Tape& t, Var out) {
            const auto& dC = t.nodes_[out].grad.data;
            auto& dA = t.nodes_[a].grad.data;
            for (std::size_t i = 0; i < dC.size(); ++i) dA[i] += dC[i];
        });
    }

    /// Concatenation along the last dim.
    Var concat(const std::vector<Var>& parts) {
        if (parts.empty()) throw ShapeError("concat: no inputs");
        const Tensor& first = value(parts[0]);
        const Shape lead(first.shape.begin(), first.shape.end() - 1);
        std::vector<std::size_t> widths;
        std::size_t total = 0;
        bool any = false;
        for (Var p : parts) {
            const Tensor& T = value(p);
            if (T.rank() != first.rank() || !std::equal(lead.begin(), lead.end(), T.shape.begin())) {
                fail("concat", first, T);
            }
            widths.push_back(T.dim(-1));
            total += T.dim(-1);
            any = any || needs(p);
        }
        const std::size_t rows = numel(lead);
        Shape os = lead;
        os.push_back(total);
        Tensor C(os);
        std::size_t offset = 0;
        for (std::size_t j = 0; j < parts.size(); ++j) {
            const Tensor& T = value(parts[j]);
            for (std::size_t r = 0; r < rows; ++r) {
                std::copy_n(T.data.begin() + r * widths[j], widths[j], C.data.begin() + r * total + offset);
            }
            offset += widths[j];
        }
        return push(std::move(C), any, [=](Tape& t, Var out) {
            const auto& dC = t.nodes_[out].grad.data;
            std::size_t off = 0;
            for (std::size_t j = 0; j < parts.size(); ++j) {
                if (t.needs(parts[j])) {
                    auto& dP = t.nodes_[parts[j]].grad.data;
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t c = 0; c < widths[j]; ++c) dP[r * widths[j] + c] += dC[r * total + off + c];
                    }
                }
                off += widths[j];
            }
        });
    }

    /// Columns [begin, end) of the last dim.
    Var slice(Var a, std::size_t begin, std::size_t end) {
        const Tensor& A = value(a);
        const std::size_t w = A.rank() ? A.dim(-1) : 0;
        if (A.rank() == 0 || begin >= end || end > w) {
            throw ShapeError("slice: [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                             shape_str(A.shape));
        }
        const std::size_t rows = A.size() / w, nw = end - begin;
        Shape os = A.shape;
        os.back() = nw;
        Tensor C(os);
        for (std::size_t r = 0; r < rows; ++r) std::copy_n(A.data.begin() + r * w + begin, nw, C.data.begin() + r * nw);
        return push(std::move(C), needs(a), [=](Tape& t, Var out) {
            const auto& dC = t.nodes_[out].grad.data;
            auto& dA = t.nodes_[a].grad.data;
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < nw; ++c) dA[r * w + begin + c] += dC[r * nw + c];
            }
        });
    }

    /// Max-subtracted softmax over the last dim.
    Var softmax(Var a) {
        const Tensor& A = value(a);
        if (A.rank() == 0) throw ShapeError("softmax: scalar input");
        const std::size_t w = A.dim(-1), rows = A.size() / w;
        Tensor Y(A.shape);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* x = A.data.data() + r * w;
            double* y = Y.data.data() + r * w;
            const double mx = *std::max_element(x, x + w);
            double s = 0.0;
            for (std::size_t c = 0; c < w; ++c) s += (y[c] = std::exp(x[c] - mx));
            for (std::size_t c = 0; c < w; ++c) y[c] /= s;
        }
        return push(std::move(Y), needs(a), [=](Tape& t, Var out) {
            const auto& y = t.nodes_[out].value.data;
            const auto& dy = t.nodes_[out].grad.data;
            auto& dx = t.nodes_[a].grad.data;
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < w; ++c) dot += dy[r * w + c] * y[r * w + c];
                for (std::size_t c = 0; c < w; ++c) dx[r * w + c] += y[r * w + c] * (dy[r * w + c] - dot);
            }
        });
    }

    /// Normalizes the last dim to zero mean, unit variance, then applies gamma and beta (both shape (D)).
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
        const Tensor& X = value(x);
        const Tensor& G = value(gamma);
        const Tensor& Bt = value(beta);
        if (X.rank() == 0 || G.shape != Shape{X.dim(-1)} || Bt.shape != G.shape) fail("layer_norm", X, G);
        const std::size_t w = X.dim(-1), rows = X.size() / w;
        Tensor Y(X.shape);
        auto xhat = std::make_shared<std::vector<double>>(X.size());
        auto inv_sd = std::make_shared<std::vector<double>>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* xr = X.data.data() + r * w;
            double mu = 0.0;
            for (std::size_t c = 0; c < w; ++c) mu += xr[c];
            mu /= static_cast<double>(w);
            double var = 0.0;
            for (std::size_t c = 0; c < w; ++c) var += (xr[c] - mu) * (xr[c] - mu);
            var /= static_cast<double>(w);
            const double is = 1.0 / std::sqrt(var + eps);
            (*inv_sd)[r] = is;
            for (std::size_t c = 0; c < w; ++c) {
                const double h = (xr[c] - mu) * is;
                (*xhat)[r * w + c] = h;
                Y[r * w + c] = h * G[c] + Bt[c];
            }
        }
        return push(std::move(Y), needs(x) || needs(gamma) || needs(beta), [=](Tape& t, Var out) {
            const auto& dy = t.nodes_[out].grad.data;
            const auto& g = t.nodes_[gamma].value.data;
            for (std::size_t r = 0; r < rows; ++r) {
                const double* h = xhat->data() + r * w;
                const double* d = dy.data() + r * w;
                if (t.needs(gamma)) {
                    auto& dg = t.nodes_[gamma].grad.data;
                    for (std::size_t c = 0; c < w; ++c) dg[c] += d[c] * h[c];
                }
                if (t.needs(beta)) {
                    auto& db = t.nodes_[beta].grad.data;
                    for (std::size_t c = 0; c < w; ++c) db[c] += d[c];
                }
                if (t.needs(x)) {
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::size_t c = 0; c < w; ++c) {
                        mean_dh += d[c] * g[c];
                        mean_dh_h += d[c] * g[c] * h[c];
                    }
                    mean_dh /= static_cast<double>(w);
                    mean_dh_h /= static_cast<double>(w);
                    auto& dx = t.nodes_[x].grad.data;
                    for (std::size_t c = 0; c < w; ++c) {
                        dx[r * w + c] += (*inv_sd)[r] * (d[c] * g[c] - mean_dh - h[c] * mean_dh_h);
                    }
                }
            }
        });
    }

    /// 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    Var gelu_approx(Var a) {
        static constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
        Tensor Y = value(a);
        for (auto& v : Y.data) v = 0.5 * v * (1.0 + std::tanh(kC * (v + 0.044715 * v * v * v)));
        return push(std::move(Y), needs(a), [=](Tape& t, Var out) {
            const auto& x = t.nodes_[a].value.data;
            const auto& dy = t.nodes_[out].grad.data;
            auto& dx = t.nodes_[a].grad.data;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double v = x[i];
                const double th = std::tanh(kC * (v + 0.044715 * v * v * v));
                const double dth = (1.0 - th * th) * kC * (1.0 + 3.0 * 0.044715 * v * v);
                dx[i] += dy[i] * (0.5 * (1.0 + th) + 0.5 * v * dth);
            }
        });
    }

    /// Rows of `table` (V, D) picked by `indices`; output shape lead + (D).
    Var embedding_lookup(Var table, std::vector<int> indices, Shape lead) {
        const Tensor& T = value(table);
        if (T.rank() != 2 || numel(lead) != indices.size()) {
            throw ShapeError("embedding_lookup: table " + shape_str(T.shape) + ", " + std::to_string(indices.size()) +
                             " indices for lead shape " + shape_str(lead));
        }
        const std::size_t v = T.dim(0), d = T.dim(1);
        Shape os = std::move(lead);
        os.push_back(d);
        Tensor Y(os);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            if (indices[i] < 0 || static_cast<std::size_t>(indices[i]) >= v) {
                throw ShapeError("embedding_lookup: index " + std::to_string(indices[i]) + " outside table of " +
                                 std::to_string(v) + " rows");
            }
            std::copy_n(T.data.begin() + indices[i] * d, d, Y.data.begin() + i * d);
        }
        return push(std::move(Y), needs(table), [=, idx = std::move(indices)](Tape& t, Var out) {
            const auto& dy = t.nodes_[out].grad.data;
            auto& dT = t.nodes_[table].grad.data;
            for (std::size_t i = 0; i < idx.size(); ++i) {
                for (std::size_t c = 0; c < d; ++c) dT[idx[i] * d + c] += dy[i * d + c];
            }
        });
    }

    /// Mean cross-entropy over rows whose mask is set. Logits (..., C); one target per row.
    /// With an empty mask the loss is 0 and no gradient flows.
    Var cross_entropy_masked(Var logits, std::vector<int> targets, std::vector<std::uint8_t> mask) {
        const Tensor& L = value(logits);
        if (L.rank() == 0) throw ShapeError("cross_entropy_masked: scalar logits");
        const std::size_t c = L.dim(-1), rows = L.size() / c;
        if (targets.size() != rows || mask.size() != rows) {
            throw ShapeError("cross_entropy_masked: logits " + shape_str(L.shape) + " with " +
                             std::to_string(targets.size()) + " targets and " + std::to_string(mask.size()) +
                             " mask entries");
        }
        auto probs = std::make_shared<std::vector<double>>(L.size());
        double total = 0.0;
        std::size_t count = 0;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* x = L.data.data() + r * c;
            const double mx = *std::max_element(x, x + c);
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) s += std::exp(x[j] - mx);
            const double lse = mx + std::log(s);
            for (std::size_t j = 0; j < c; ++j) (*probs)[r * c + j] = std::exp(x[j] - lse);
            if (!mask[r]) continue;
            if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= c) {
                throw ShapeError("cross_entropy_masked: target " + std::to_string(targets[r]) + " outside " +
                                 std::to_string(c) + " classes");
            }
            total += lse - x[targets[r]];
            ++count;
        }
        const double denom = count ? static_cast<double>(count) : 1.0;
        return push(Tensor(Shape{}, {total / denom}), needs(logits),
                    [=, tg = std::move(targets), mk = std::move(mask)](Tape& t, Var out) {
                        const double g = t.nodes_[out].grad[0] / denom;
                        auto& dL = t.nodes_[logits].grad.data;
                        for (std::size_t r = 0; r < rows; ++r) {
                            if (!mk[r]) continue;
                            for (std::size_t j = 0; j < c; ++j) {
                                dL[r * c + j] += g * ((*probs)[r * c + j] - (static_cast<int>(j) == tg[r] ? 1.0 : 0.0));
                            }
                        }
                    });
    }

    Var sum(Var a) {
        double s = 0.0;
        for (double v : value(a).data) s += v;
        return push(Tensor(Shape{}, {s}), needs(a), [=](Tape& t, Var out) {
            const double g = t.nodes_[out].grad[0];
            for (auto& d : t.nodes_[a].grad.data) d += g;
        });
    }

    /// Inverted dropout; identity when p == 0.
    Var dropout(Var a, double p, Rng& rng) {
        if (p <= 0.0) return a;
        if (p >= 1.0) throw ValidationError("dropout probability must be < 1");
        Tensor Y = value(a);
        auto keep = std::make_shared<std::vector<double>>(Y.size());
        for (std::size_t i = 0; i < Y.size(); ++i) {
            (*keep)[i] = rng.uniform() < p ? 0.0 : 1.0 / (1.0 - p);
            Y[i] *= (*keep)[i];
        }
        return push(std::move(Y), needs(a), [=](Tape& t, Var out) {
            const auto& dy = t.nodes_[out].grad.data;
            auto& dx = t.nodes_[a].grad.data;
            for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (*keep)[i];
        });
    }

    /// x W + b for x (..., in), W (in, out), b (out).
    Var linear(Var x, Var w, Var b) { return add(matmul(x, w), b); }

    void backward(Var loss) {
        if (backward_done_) throw Error("backward already ran on this tape; record a fresh forward pass");
        const Tensor& L = value(loss);
        if (L.size() != 1) throw ShapeError("backward: loss must be scalar, got shape " + shape_str(L.shape));
        backward_done_ = true;
        for (std::size_t i = 0; i <= static_cast<std::size_t>(loss); ++i) {
            if (nodes_[i].needs_grad) nodes_[i].grad = Tensor(nodes_[i].value.shape);
        }
        if (!nodes_[loss].needs_grad) return;
        nodes_[loss].grad[0] = 1.0;
        for (Var i = loss; i >= 0; --i) {
            auto& n = nodes_[i];
            if (n.needs_grad && n.back) n.back(*this, i);
        }
        for (Var i = 0; i <= loss; ++i) {
            auto& n = nodes_[i];
            if (!n.param) continue;
            auto& g = n.param->grad.data;
            for (std::size_t j = 0; j < g.size(); ++j) g[j] += n.grad[j];
        }
    }

private:
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    static Eigen::Map<RowMat> mat(double* p, std::size_t r, std::size_t c) {
        return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
    }
    static Eigen::Map<const RowMat> cmat(const double* p, std::size_t r, std::size_t c) {
        return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
    }

    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        Parameter* param = nullptr;
        std::function<void(Tape&, Var)> back;
    };

    Var push(Tensor value, bool needs_grad, std::function<void(Tape&, Var)> back) {
        if (backward_done_) throw Error("tape already consumed by backward");
        nodes_.push_back({std::move(value), {}, needs_grad, nullptr, std::move(back)});
        return static_cast<Var>(nodes_.size() - 1);
    }

    bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v)].needs_grad; }

    static bool is_suffix(const Shape& s, const Shape& of) {
        return s.size() <= of.size() && std::equal(s.rbegin(), s.rend(), of.rbegin());
    }

    [[noreturn]] static void fail(const char* op, const Tensor& a, const Tensor& b) {
        throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape) + " and " + shape_str(b.shape));
    }

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

}  // namespace kt::ad
