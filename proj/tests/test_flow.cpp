#include <gtest/gtest.h>

#include <cmath>

#include "unimot/error.hpp"
#include "unimot/flow.hpp"
#include "unimot/ops.hpp"

#include "oracle_values.inc"

using namespace unimot;

namespace {

Tensor filled(double v, std::size_t n = 4) {
    return Tensor({n}, v);
}

Tensor random_tensor(std::size_t n, RandomStream& rng) {
    Tensor t({n});
    for (double& v : t.data()) v = rng.normal();
    return t;
}

}  // namespace

TEST(NoiseScale, TableEndpoints) {
    const NoiseScaleConfig cfg;
    EXPECT_EQ(noise_scale(256, 256, cfg), 1.0);
    EXPECT_EQ(noise_scale(2048, 2048, cfg), 8.0);
    EXPECT_EQ(noise_scale(512, 512, cfg), 2.0);
}

TEST(NoiseScale, SquareRootLaw) {
    RandomStream rng(1);
    const NoiseScaleConfig cfg;
    for (int i = 0; i < 50; ++i) {
        const std::size_t h = 32 * (1 + rng.below(32)), w = 32 * (1 + rng.below(32));
        EXPECT_NEAR(noise_scale(2 * h, 2 * w, cfg), 2 * noise_scale(h, w, cfg), 1e-14 * noise_scale(h, w, cfg));
    }
}

TEST(NoiseScale, Normalization) {
    const NoiseScaleConfig cfg;
    EXPECT_EQ(normalized_noise_scale(8.0, cfg), 1.0);
    EXPECT_EQ(normalized_noise_scale(1.0, cfg), 0.125);
    EXPECT_THROW(normalized_noise_scale(9.0, cfg), Error);
    EXPECT_THROW(noise_scale(100, 256, cfg), Error);
}

TEST(NoiseScale, MaxResolutionSetsSigmaMax) {
    const auto cfg = NoiseScaleConfig::for_max_resolution(1.0, 4.0, 256, 256);
    EXPECT_EQ(cfg.sigma_max, 4.0);
    EXPECT_EQ(noise_scale(64, 64, cfg), 1.0);
}

TEST(SampleT, StaysInsideUnitInterval) {
    RandomStream rng(2);
    for (int i = 0; i < 100000; ++i) {
        const double t = sample_t(rng, -0.8, 3.0);
        ASSERT_GT(t, 0.0);
        ASSERT_LT(t, 1.0);
    }
}

TEST(SampleT, NarrowLimit) {
    RandomStream rng(3);
    EXPECT_NEAR(sample_t(rng, -0.8, 1e-12), 0.3100255188723875, 1e-11);
    EXPECT_NEAR(logistic(-0.8), 0.3100255188723875, 1e-15);
}

TEST(SampleT, MeanMatchesMonteCarloOracle) {
    RandomStream rng(4);
    const int n = 1'000'000;
    CompensatedSum s;
    for (int i = 0; i < n; ++i) s.add(sample_t(rng, -0.8, 0.8));
    const double mean = s.value() / n;
    const double se = std::hypot(oracle::kLogitNormalStd / std::sqrt(n), oracle::kLogitNormalMcStdErr);
    EXPECT_LT(std::abs(mean - oracle::kLogitNormalMcMean), 3 * se);
    EXPECT_LT(std::abs(oracle::kLogitNormalMcMean - oracle::kLogitNormalQuadMean), 3 * oracle::kLogitNormalMcStdErr);
}

TEST(Interpolate, Endpoints) {
    RandomStream rng(5);
    const auto x = random_tensor(16, rng), eps = random_tensor(16, rng);
    EXPECT_EQ(interpolate(x, eps, 1.0, 2.5), x);
    EXPECT_EQ(interpolate(x, eps, 0.0, 2.5), scale(eps, 2.5));
}

TEST(Interpolate, ScalarArithmetic) {
    EXPECT_EQ(interpolate(filled(1), filled(0.5), 0.5, 2.0), filled(1.0));
    EXPECT_THROW(interpolate(filled(1), filled(1, 3), 0.5, 1.0), Error);
}

TEST(Velocity, TimeInvariantAlongInterpolant) {
    RandomStream rng(6);
    const auto x = random_tensor(32, rng), eps = random_tensor(32, rng);
    const auto a = target_velocity(x, interpolate(x, eps, 0.3, 1.5), 0.3);
    const auto b = target_velocity(x, interpolate(x, eps, 0.7, 1.5), 0.7);
    EXPECT_LT(max_abs_diff(a, b), 1e-12);
    EXPECT_LT(max_abs_diff(a, sub(x, scale(eps, 1.5))), 1e-12);
}

TEST(Velocity, ScalarCases) {
    EXPECT_EQ(interpolate(filled(1), filled(0), 0.5, 1.0), filled(0.5));
    EXPECT_EQ(target_velocity(filled(1), filled(0.5), 0.5), filled(1));
    EXPECT_EQ(target_velocity(filled(0.7), interpolate(filled(0.7), filled(0.35), 0.4, 2.0), 0.4), filled(0));
    EXPECT_EQ(xpred_to_velocity(filled(2), filled(1), 0.5), filled(2));
    EXPECT_EQ(xpred_to_velocity(filled(0.3), filled(0.3), 0.2), filled(0));
    EXPECT_THROW(target_velocity(filled(1), filled(1), 1.0), Error);
}

TEST(Velocity, PerfectPredictionGivesTarget) {
    RandomStream rng(7);
    const auto x = random_tensor(8, rng), eps = random_tensor(8, rng);
    const auto z = interpolate(x, eps, 0.45, 1.0);
    EXPECT_EQ(xpred_to_velocity(x, z, 0.45), target_velocity(x, z, 0.45));
}

TEST(Losses, GenLoss) {
    EXPECT_EQ(gen_loss(filled(0.3), filled(0.3)), 0.0);
    EXPECT_DOUBLE_EQ(gen_loss(filled(1.5), filled(-0.5)), 4.0);
    EXPECT_EQ(gen_loss(Tensor::vector({0, 1}), Tensor::vector({1, 1})), 0.5);
}

TEST(Losses, TextLoss) {
    const std::vector<int> t1{3};
    EXPECT_NEAR(text_loss(Tensor({1, 7}), t1), std::log(7.0), 1e-15);
    const std::vector<int> t0{0};
    EXPECT_LT(text_loss(Tensor::matrix({{800, 0, 0}}), t0), 1e-300);
    const std::vector<int> c1{1};
    EXPECT_NEAR(text_loss(Tensor::matrix({{0, std::log(3.0)}}), c1), -std::log(0.75), 1e-15);
    const std::vector<int> bad{9};
    EXPECT_THROW(text_loss(Tensor({1, 3}), bad), Error);
}

TEST(Losses, TotalLoss) {
    EXPECT_EQ(total_loss(2.0, 0.5, {1, 0}), 2.0);
    EXPECT_NEAR(total_loss(2.0, 0.5, {0.1, 1.0}), 0.7, 1e-15);
    EXPECT_THROW(total_loss(2.0, 0.5, {0, 0}), Error);
    EXPECT_THROW(total_loss(2.0, 0.5, {-1, 1}), Error);
}

TEST(DropConditions, Degenerate) {
    RandomStream rng(8);
    for (int i = 0; i < 1000; ++i) {
        EXPECT_EQ(drop_conditions(rng, 0, 0), (ConditionFlags{true, true}));
        EXPECT_EQ(drop_conditions(rng, 0, 1), (ConditionFlags{false, false}));
    }
    EXPECT_THROW(drop_conditions(rng, 0.6, 0.6), Error);
}

TEST(DropConditions, BranchFrequencies) {
    RandomStream rng(9);
    const int n = 100000;
    int keep = 0, text = 0, all = 0;
    for (int i = 0; i < n; ++i) {
        const auto f = drop_conditions(rng, 0.1, 0.1);
        if (f.text_present) ++keep;
        else if (f.image_context_present) ++text;
        else ++all;
    }
    auto within = [&](int count, double p) {
        const double sd = std::sqrt(n * p * (1 - p));
        return std::abs(count - n * p) < 3 * sd;
    };
    EXPECT_TRUE(within(keep, 0.8)) << keep;
    EXPECT_TRUE(within(text, 0.1)) << text;
    EXPECT_TRUE(within(all, 0.1)) << all;
}

TEST(FlowSample, ConsistentWithInterpolant) {
    RandomStream rng(10);
    const auto x = random_tensor(12, rng);
    const auto s = draw_flow_sample(x, 2.0, -0.8, 0.8, rng);
    EXPECT_EQ(s.z, interpolate(x, s.eps, s.t, 2.0));
    EXPECT_GT(s.t, 0.0);
    EXPECT_LT(s.t, 1.0);
}
