#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <numeric>

#include "unimot/autograd.hpp"
#include "unimot/error.hpp"
#include "unimot/grad_check.hpp"
#include "unimot/ops.hpp"
#include "unimot/random.hpp"
#include "unimot/verify.hpp"

#include "oracle_values.inc"

using namespace unimot;

TEST(Matmul, IdentityLeavesMatrix) {
    const auto a = Tensor::matrix({{1, 2}, {3, 4}});
    EXPECT_EQ(matmul(Tensor::matrix({{1, 0}, {0, 1}}), a), a);
}

TEST(Matmul, HandExpansion) {
    EXPECT_EQ(matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{5, 6}, {7, 8}})),
              Tensor::matrix({{19, 22}, {43, 50}}));
}

TEST(Matmul, ZeroLeftOperand) {
    const auto b = Tensor::matrix({{1.5, -2}, {3, 4}, {-5, 6}});
    EXPECT_EQ(matmul(Tensor({2, 3}), b), Tensor({2, 2}));
}

TEST(Matmul, RejectsMismatchedInnerExtent) {
    try {
        matmul(Tensor({2, 3}), Tensor({2, 2}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::shape_mismatch);
    }
}

TEST(Gelu, KnownValues) {
    EXPECT_EQ(gelu(0.0), 0.0);
    EXPECT_NEAR(gelu(1.0), 0.8413447460685429, 1e-15);
    EXPECT_LT(std::abs(gelu(-10.0)), 1e-8);
}

TEST(Gelu, DerivativeMatchesDifference) {
    for (double x : {-3.0, -0.7, 0.0, 0.4, 2.5}) {
        const double h = 1e-6;
        EXPECT_NEAR(gelu_grad(x), (gelu(x + h) - gelu(x - h)) / (2 * h), 1e-8) << x;
    }
}

TEST(Softmax, Symmetric) {
    const auto s = softmax_last(Tensor::vector({0, 0}));
    EXPECT_EQ(s[0], 0.5);
    EXPECT_EQ(s[1], 0.5);
}

TEST(Softmax, ExtremeMagnitudeIsShifted) {
    const auto s = softmax_last(Tensor::vector({1000, 1000}));
    EXPECT_EQ(s[0], 0.5);
    EXPECT_EQ(s[1], 0.5);
}

TEST(Softmax, ClosedFormRatio) {
    const auto s = softmax_last(Tensor::vector({0, std::log(3.0)}));
    EXPECT_NEAR(s[0], 0.25, 1e-15);
    EXPECT_NEAR(s[1], 0.75, 1e-15);
}

TEST(Softmax, RowsSumToOne) {
    RandomStream rng(3);
    Tensor x({7, 5});
    for (double& v : x.data()) v = 30 * rng.normal();
    const auto s = softmax_last(x);
    for (std::size_t r = 0; r < 7; ++r) {
        EXPECT_NEAR(std::accumulate(s.row(r).begin(), s.row(r).end(), 0.0), 1.0, 1e-14);
    }
}

TEST(RmsNorm, ConstantRow) {
    EXPECT_EQ(rms_norm(Tensor::matrix({{2, 2}}), Tensor::vector({1, 1}), 0.0), Tensor::matrix({{1, 1}}));
}

TEST(RmsNorm, ZeroRow) {
    EXPECT_EQ(rms_norm(Tensor::matrix({{0, 0}}), Tensor::vector({1, 1}), 1e-6), Tensor::matrix({{0, 0}}));
    EXPECT_EQ(rms_norm(Tensor::matrix({{0, 0}}), Tensor::vector({1, 1}), 0.0), Tensor::matrix({{0, 0}}));
}

TEST(RmsNorm, Formula) {
    const auto y = rms_norm(Tensor::matrix({{3, 4}}), Tensor::vector({1, 1}), 0.0);
    EXPECT_NEAR(y[0], 3 / std::sqrt(12.5), 1e-15);
    EXPECT_NEAR(y[1], 4 / std::sqrt(12.5), 1e-15);
}

TEST(GradCheck, QuadraticExact) {
    const std::vector<double> p{1, 2};
    const std::vector<double> g{2, 4};
    const auto r = grad_check([](std::span<const double> x) { return x[0] * x[0] + x[1] * x[1]; }, g, p, 1e-5);
    EXPECT_LT(r.max_rel_error, 1e-9);
    EXPECT_EQ(r.checked, 2u);
}

TEST(GradCheck, ConstantLossZeroGradient) {
    const std::vector<double> p{1, -2, 3};
    const std::vector<double> g{0, 0, 0};
    const auto r = grad_check([](std::span<const double>) { return 7.0; }, g, p, 1e-5);
    EXPECT_EQ(r.max_rel_error, 0.0);
}

TEST(GradCheck, FlagsWrongGradient) {
    const std::vector<double> p{1, 2};
    const std::vector<double> g{2, 5};
    const auto r = grad_check([](std::span<const double> x) { return x[0] * x[0] + x[1] * x[1]; }, g, p, 1e-5);
    EXPECT_GT(r.max_rel_error, 0.1);
    EXPECT_EQ(r.worst_index, 1u);
}

TEST(GradCheck, NonFiniteProbeThrows) {
    const std::vector<double> p{0.0};
    const std::vector<double> g{0.0};
    try {
        grad_check([](std::span<const double> x) { return std::log(x[0]); }, g, p, 1e-3);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::non_finite);
    }
}

TEST(Autograd, OpsMatchFiniteDifferences) {
    RandomStream rng(11);
    auto rnd = [&](Shape s) {
        Tensor t(std::move(s));
        for (double& v : t.data()) v = rng.normal();
        return t;
    };
    Tensor a = rnd({3, 4}), b = rnd({4, 5}), gain = rnd({5}), bias = rnd({5});
    Tensor target = rnd({3, 5});
    const std::vector<int> targets{1, 4, 0};
    NamedParams params{{"a", &a}, {"b", &b}, {"gain", &gain}, {"bias", &bias}};
    auto build = [&](ad::Tape& t) {
        auto x = ad::matmul(t, t.param(a), t.param(b));
        x = ad::add_bias(t, x, t.param(bias));
        x = ad::gelu(t, x);
        x = ad::rms_norm(t, x, t.param(gain), 1e-6);
        auto ce = ad::cross_entropy_sum(t, x, targets);
        auto mse = ad::mse(t, ad::scale(t, x, 0.5), target);
        const std::pair<ad::Var, double> terms[] = {{ce, 0.3}, {mse, 1.7}};
        return ad::weighted_sum(t, terms);
    };
    const auto r = tape_grad_check(params, build, 1e-5, 0, RandomStream(1));
    EXPECT_LT(r.report.max_rel_error, 1e-7) << r.worst_param;
}

TEST(CompensatedSum, RecoversCancelledTerms) {
    CompensatedSum s;
    double naive = 1.0;
    s.add(1.0);
    for (int i = 0; i < 1000; ++i) {
        s.add(1e-17);
        naive += 1e-17;
    }
    s.add(-1.0);
    EXPECT_EQ(naive - 1.0, 0.0);
    EXPECT_NEAR(s.value(), 1e-14, 1e-27);
}

TEST(Philox, KnownAnswerVectors) {
    EXPECT_EQ(philox4x32_10({0, 0, 0, 0}, {0, 0}),
              (RandomStream::Block{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
    EXPECT_EQ(philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}),
              (RandomStream::Block{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
    EXPECT_EQ(philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}),
              (RandomStream::Block{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(RandomStream, MatchesOracleTable) {
    std::size_t bi = 0, di = 0, ki = 0;
    for (std::size_t s = 0; s < std::size(oracle::kStreamSeeds); ++s) {
        const RandomStream base(oracle::kStreamSeeds[s]);
        for (std::uint64_t i = 0; i < 3; ++i) {
            const auto b = base.block_at(i);
            for (auto w : b) EXPECT_EQ(w, oracle::kStreamBlocks[bi++]);
        }
        RandomStream r = base;
        for (int i = 0; i < 4; ++i) EXPECT_EQ(r.uniform(), oracle::kStreamUniform[di + i]);
        for (int i = 0; i < 4; ++i) EXPECT_NEAR(r.normal(), oracle::kStreamNormal[di + i], 1e-15);
        for (int i = 0; i < 4; ++i) EXPECT_EQ(r.below(10), oracle::kStreamBelow10[di + i]);
        di += 4;
        for (auto w : base.split("step").split(5).key()) EXPECT_EQ(w, oracle::kStreamSplitKeys[ki++]);
        for (auto w : base.split(3).key()) EXPECT_EQ(w, oracle::kStreamSplitKeys[ki++]);
    }
}

TEST(RandomStream, SplitDoesNotAdvanceParent) {
    RandomStream a(5);
    const auto before = a;
    (void)a.split("child");
    EXPECT_EQ(a, before);
    EXPECT_NE(a.split("x").key(), a.split("y").key());
    EXPECT_NE(a.split(1).key(), a.split(2).key());
}

TEST(RandomStream, UniformStaysOpen) {
    RandomStream r(8);
    for (int i = 0; i < 100000; ++i) {
        const double u = r.uniform();
        ASSERT_GT(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}
