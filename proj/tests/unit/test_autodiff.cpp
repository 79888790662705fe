#include <gtest/gtest.h>

#include "kt/autodiff/adam.hpp"
#include "kt/autodiff/tape.hpp"
#include "support/gradcheck.hpp"

using namespace kt;
using namespace kt::ad;
using kt::testing::gradcheck;
using kt::testing::weighted_sum;

namespace {

Tensor randn(Shape s, std::uint64_t seed, double sd = 1.0) {
    Rng rng(seed);
    return normal_tensor(std::move(s), sd, rng);
}

constexpr double kTol = 1e-4;

}  // namespace

TEST(Primitives, GeluAtZero) {
    Tape t;
    const auto y = t.gelu_approx(t.constant(Tensor({1}, {0.0})));
    EXPECT_EQ(t.value(y)[0], 0.0);
}

TEST(Primitives, SoftmaxOfConstantIsUniform) {
    Tape t;
    const auto y = t.softmax(t.constant(Tensor({4}, {3.0, 3.0, 3.0, 3.0})));
    for (double v : t.value(y).data) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Primitives, MatmulHandProduct) {
    Tape t;
    const auto a = t.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    const auto b = t.constant(Tensor({3, 2}, {7, 8, 9, 10, 11, 12}));
    // [1 2 3; 4 5 6] [7 8; 9 10; 11 12] = [58 64; 139 154]
    EXPECT_EQ(t.value(t.matmul(a, b)).data, (std::vector<double>{58, 64, 139, 154}));
}

TEST(Primitives, ShapeMismatchNamesOpAndShapes) {
    Tape t;
    const auto a = t.constant(Tensor({2, 3}));
    const auto b = t.constant(Tensor({2, 3}));
    try {
        t.matmul(a, b);
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("(2,3)"), std::string::npos);
    }
    EXPECT_THROW(t.add(a, t.constant(Tensor({2}))), ShapeError);
}

TEST(Backward, SumGivesOnes) {
    Tape t;
    const auto x = t.input(randn({3, 4}, 1));
    t.backward(t.sum(x));
    for (double g : t.grad(x).data) EXPECT_EQ(g, 1.0);
}

TEST(Backward, HalfSquaredNormGivesX) {
    Tape t;
    const auto x = t.input(randn({5}, 2));
    t.backward(t.scale(t.sum(t.mul(x, x)), 0.5));
    EXPECT_EQ(t.grad(x).data, t.value(x).data);
}

TEST(Backward, RejectsNonScalarAndSecondCall) {
    Tape t;
    const auto x = t.input(randn({3}, 3));
    EXPECT_THROW(t.backward(x), ShapeError);
    const auto s = t.sum(x);
    t.backward(s);
    EXPECT_THROW(t.backward(s), Error);
    EXPECT_EQ(t.grad(x)[0], 1.0);
}

TEST(Backward, SharedParameterAccumulates) {
    Parameter p("w", Tensor({2}, {1.5, -2.0}));
    Tape t;
    const auto a = t.param(p);
    const auto b = t.param(p);
    t.backward(t.sum(t.add(t.scale(a, 2.0), t.scale(b, 3.0))));
    EXPECT_EQ(p.grad.data, (std::vector<double>{5.0, 5.0}));
}

TEST(GradCheck, Matmul) {
    const auto batched = gradcheck({randn({2, 3, 4}, 4), randn({2, 4, 5}, 5)},
                                   [](Tape& t, auto& v) { return weighted_sum(t, t.matmul(v[0], v[1])); });
    EXPECT_LE(batched.max_rel_error, kTol);
    const auto shared = gradcheck({randn({2, 3, 4}, 6), randn({4, 5}, 7)},
                                  [](Tape& t, auto& v) { return weighted_sum(t, t.matmul(v[0], v[1])); });
    EXPECT_LE(shared.max_rel_error, kTol);
}

TEST(GradCheck, AddMulScaleBroadcast) {
    const auto r = gradcheck({randn({2, 3, 4}, 8), randn({4}, 9), randn({3, 4}, 10)}, [](Tape& t, auto& v) {
        return weighted_sum(t, t.scale(t.mul(t.add(v[0], v[1]), v[2]), -1.7));
    });
    EXPECT_LE(r.max_rel_error, kTol);
}

TEST(GradCheck, TransposeReshapeConcatSlice) {
    const auto r = gradcheck({randn({2, 3, 4}, 11), randn({2, 3, 2}, 12)}, [](Tape& t, auto& v) {
        const auto c = t.concat({v[0], v[1], v[0]});
        const auto s = t.slice(c, 2, 7);
        const auto tr = t.transpose(s);
        return weighted_sum(t, t.reshape(tr, {6, 5}));
    });
    EXPECT_LE(r.max_rel_error, kTol);
}

TEST(GradCheck, Softmax) {
    const auto r = gradcheck({randn({3, 5}, 13, 2.0)}, [](Tape& t, auto& v) { return weighted_sum(t, t.softmax(v[0])); });
    EXPECT_LE(r.max_rel_error, kTol);
}

TEST(GradCheck, LayerNorm) {
    const auto r = gradcheck({randn({4, 6}, 14), randn({6}, 15), randn({6}, 16)},
                             [](Tape& t, auto& v) { return weighted_sum(t, t.layer_norm(v[0], v[1], v[2])); });
    EXPECT_LE(r.max_rel_error, kTol);
}

TEST(GradCheck, Gelu) {
    const auto r = gradcheck({randn({10}, 17, 2.0)}, [](Tape& t, auto& v) { return weighted_sum(t, t.gelu_approx(v[0])); });
    EXPECT_LE(r.max_rel_error, kTol);
}

TEST(GradCheck, EmbeddingLookup) {
    const auto r = gradcheck({randn({5, 3}, 18)}, [](Tape& t, auto& v) {
        return weighted_sum(t, t.embedding_lookup(v[0], {0, 4, 4, 2, 0, 1}, {2, 3}));
    });
    EXPECT_LE(r.max_rel_error, kTol);
}

TEST(GradCheck, CrossEntropyMasked) {
    const auto r = gradcheck({randn({2, 3, 4}, 19)}, [](Tape& t, auto& v) {
        return t.cross_entropy_masked(v[0], {0, 3, 1, 2, 2, 0}, {1, 0, 1, 1, 0, 1});
    });
    EXPECT_LE(r.max_rel_error, kTol);
}

TEST(GradCheck, DropoutWithFixedMask) {
    const auto r = gradcheck({randn({20}, 20)}, [](Tape& t, auto& v) {
        Rng rng(5);
        return weighted_sum(t, t.dropout(v[0], 0.3, rng));
    });
    EXPECT_LE(r.max_rel_error, kTol);
}

TEST(GradCheck, CompositeMlpOnTwentyParameters) {
    // 3 -> 3 -> 2 MLP: W1 (9) + b1 (3) + W2 (6) + b2 (2) = 20 parameters
    const Tensor x = randn({4, 3}, 21);
    const auto r = gradcheck({randn({3, 3}, 22), randn({3}, 23), randn({3, 2}, 24), randn({2}, 25)},
                             [&](Tape& t, auto& v) {
                                 const auto h = t.gelu_approx(t.linear(t.constant(x), v[0], v[1]));
                                 const auto logits = t.linear(h, v[2], v[3]);
                                 return t.cross_entropy_masked(logits, {0, 1, 1, 0}, {1, 1, 1, 1});
                             });
    EXPECT_EQ(r.checked, 20u);
    EXPECT_LE(r.max_rel_error, kTol);
}

TEST(Properties, SoftmaxRowsSumToOne) {
    Tape t;
    const auto y = t.softmax(t.constant(randn({50, 7}, 26, 5.0)));
    for (std::size_t r = 0; r < 50; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 7; ++c) s += t.value(y)[r * 7 + c];
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Properties, LayerNormStandardizesRows) {
    // eps = 1e-5 biases the variance by eps/var, so rows are drawn with variance >= 100
    Tape t;
    const auto y = t.layer_norm(t.constant(randn({20, 32}, 27, 20.0)), t.constant(Tensor({32}, 1.0)),
                                t.constant(Tensor({32}, 0.0)));
    for (std::size_t r = 0; r < 20; ++r) {
        double mu = 0.0, var = 0.0;
        for (std::size_t c = 0; c < 32; ++c) mu += t.value(y)[r * 32 + c];
        mu /= 32;
        for (std::size_t c = 0; c < 32; ++c) var += std::pow(t.value(y)[r * 32 + c] - mu, 2);
        var /= 32;
        EXPECT_LE(std::abs(mu), 1e-10);
        EXPECT_NEAR(var, 1.0, 1e-6);
    }
}

TEST(Adam, ZeroGradientIsFixedPoint) {
    Parameter p("x", randn({4}, 28));
    const auto before = p.value.data;
    AdamState s;
    adam_step({&p}, s, {});
    EXPECT_EQ(p.value.data, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    Parameter p("x", Tensor({3}, {0.0, 1.0, -2.0}));
    p.grad = Tensor({3}, {0.3, -4.0, 1e-3});
    AdamState s;
    adam_step({&p}, s, {});
    // m_hat / sqrt(v_hat) = g / |g| = sign(g)
    EXPECT_NEAR(p.value[0], -1e-3, 1e-9);
    EXPECT_NEAR(p.value[1], 1.0 + 1e-3, 1e-9);
    EXPECT_NEAR(p.value[2], -2.0 - 1e-3, 1e-7);
}

TEST(Adam, MinimizesQuadraticBowl) {
    Parameter p("x", randn({5}, 29));
    AdamState s;
    AdamConfig cfg;
    cfg.lr = 1e-2;
    for (int step = 0; step < 2000; ++step) {
        p.zero_grad();
        Tape t;
        const auto x = t.param(p);
        t.backward(t.scale(t.sum(t.mul(x, x)), 0.5));
        adam_step({&p}, s, cfg);
    }
    double norm = 0.0;
    for (double v : p.value.data) norm += v * v;
    EXPECT_LT(std::sqrt(norm), 1e-3);
}
