#include <gtest/gtest.h>

#include <cmath>

#include "unimot/error.hpp"
#include "unimot/ops.hpp"
#include "unimot/sampler.hpp"

using namespace unimot;

namespace {

Tensor random_field(RandomStream& rng) {
    Tensor t({3, 32, 32});
    for (double& v : t.data()) v = rng.normal();
    return t;
}

// Returns a fixed clean image no matter the state.
class OraclePredictor final : public XPredictor {
public:
    explicit OraclePredictor(Tensor x) : x_(std::move(x)) {}
    Tensor predict(const GenerationContext&, ConditionFlags, const Tensor&, double, double) const override {
        ++calls;
        return x_;
    }
    mutable std::size_t calls = 0;

private:
    Tensor x_;
};

// Depends on the branch flags so guidance has something to amplify.
class BranchPredictor final : public XPredictor {
public:
    Tensor predict(const GenerationContext&, ConditionFlags f, const Tensor& z, double t, double) const override {
        Tensor x = z;
        const double shift = (f.text_present ? 0.4 : 0.0) + (f.image_context_present ? 0.2 : 0.0);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::tanh(0.3 * z[i] + shift * t + 0.01 * double(i % 5));
        return x;
    }
};

}  // namespace

TEST(Schedule, ShiftOneIsUniform) {
    const auto t = shifted_schedule(8, 1.0);
    for (std::size_t k = 0; k <= 8; ++k) EXPECT_DOUBLE_EQ(t[k], k / 8.0);
}

TEST(Schedule, ShiftThreeMidpoint) {
    const auto t = shifted_schedule(2, 3.0);
    EXPECT_EQ(t[1], 0.25);
}

TEST(Schedule, EndpointsAndMonotone) {
    for (double shift : {1.0, 2.0, 3.0, 7.5}) {
        const auto t = shifted_schedule(32, shift);
        EXPECT_EQ(t.front(), 0.0);
        EXPECT_EQ(t.back(), 1.0);
        for (std::size_t k = 1; k < t.size(); ++k) EXPECT_GT(t[k], t[k - 1]);
    }
    EXPECT_THROW(shifted_schedule(0, 3.0), Error);
    EXPECT_THROW(shifted_schedule(4, 0.5), Error);
}

TEST(InitNoise, StandardDeviationFollowsResolution) {
    const NoiseScaleConfig cfg;
    for (auto [side, sigma] : {std::pair<std::size_t, double>{256, 1.0}, {512, 2.0}}) {
        RandomStream rng(side);
        const auto z = init_noise(side, side, rng, cfg);
        CompensatedSum s, s2;
        for (double v : z.data()) {
            s.add(v);
            s2.add(v * v);
        }
        const double n = static_cast<double>(z.size());
        const double mean = s.value() / n;
        const double sd = std::sqrt(s2.value() / n - mean * mean);
        EXPECT_NEAR(sd, sigma, 0.01 * sigma) << side;
    }
}

TEST(InitNoise, SeedDeterminism) {
    const NoiseScaleConfig cfg;
    RandomStream a(3), b(3);
    EXPECT_EQ(init_noise(64, 32, a, cfg), init_noise(64, 32, b, cfg));
}

TEST(Guide, UnitScalesReturnFullBitwise) {
    RandomStream rng(4);
    const GuidanceTriple g{random_field(rng), random_field(rng), random_field(rng)};
    EXPECT_EQ(guide(g, 1.0, 1.0), g.full);
}

TEST(Guide, ScalarArithmetic) {
    const GuidanceTriple g{Tensor({1}, 2.0), Tensor({1}, 1.0), Tensor({1}, 0.0)};
    EXPECT_EQ(guide(g, 4.0, 1.0)[0], 5.0);
}

TEST(Guide, TextOnlyGuidanceClosedForm) {
    RandomStream rng(5);
    const GuidanceTriple g{random_field(rng), random_field(rng), random_field(rng)};
    const auto expect = sub(scale(g.full, 4.0), scale(g.img, 3.0));
    EXPECT_LT(max_abs_diff(guide(g, 4.0, 1.0), expect), 1e-12);
}

TEST(Guide, ZeroScalesGiveUnconditional) {
    RandomStream rng(6);
    const GuidanceTriple g{random_field(rng), random_field(rng), random_field(rng)};
    EXPECT_EQ(guide(g, 0.0, 0.0), g.unc);
    EXPECT_THROW(guide({g.full, g.img, Tensor({2})}, 2.0, 1.0), Error);
}

TEST(Renorm, Cases) {
    RandomStream rng(7);
    const auto ref = random_field(rng);
    EXPECT_LT(max_abs_diff(cfg_renorm(ref, ref).velocity, ref), 1e-15);
    EXPECT_LT(max_abs_diff(cfg_renorm(scale(ref, 2.0), ref).velocity, ref), 1e-15);
    for (int i = 0; i < 50; ++i) {
        const auto g = scale(random_field(rng), 10 * rng.uniform());
        const auto r = random_field(rng);
        const auto out = cfg_renorm(g, r);
        EXPECT_FALSE(out.degenerate);
        EXPECT_NEAR(l2_norm(out.velocity.data()), l2_norm(r.data()), 1e-12 * l2_norm(r.data()));
    }
    const auto zero = cfg_renorm(Tensor({3, 32, 32}), ref);
    EXPECT_TRUE(zero.degenerate);
    EXPECT_EQ(zero.velocity, Tensor({3, 32, 32}));
}

TEST(Euler, Cases) {
    RandomStream rng(8);
    const auto z = random_field(rng);
    EXPECT_EQ(euler_step(z, Tensor({3, 32, 32}), 0.2, 0.4), z);
    EXPECT_EQ(euler_step(Tensor({1}), Tensor({1}, 2.0), 0.5, 0.75)[0], 0.5);
    const auto x = random_field(rng);
    EXPECT_LT(max_abs_diff(euler_step(z, sub(x, z), 0.0, 1.0), x), 1e-15);
    EXPECT_THROW(euler_step(z, z, 0.5, 0.5), Error);
}

TEST(Sample, SingleStepPerfectPredictorIsExact) {
    RandomStream rng(9);
    Tensor x({3, 32, 64});
    for (double& v : x.data()) v = 2 * rng.uniform() - 1;
    const OraclePredictor model(x);
    SamplerConfig cfg;
    cfg.steps = 1;
    cfg.gamma = cfg.gamma_img = 1.0;
    const auto r = sample(model, {}, 32, 64, cfg, NoiseScaleConfig{}, RandomStream(1));
    EXPECT_EQ(r.image, x);
    EXPECT_EQ(model.calls, 1u);
}

TEST(Sample, Deterministic) {
    const BranchPredictor model;
    GenerationContext ctx;
    ctx.items.push_back(TextItem{{1, 4, 2}});
    SamplerConfig cfg;
    cfg.steps = 6;
    const auto a = sample(model, ctx, 32, 32, cfg, NoiseScaleConfig{}, RandomStream(3));
    const auto b = sample(model, ctx, 32, 32, cfg, NoiseScaleConfig{}, RandomStream(3));
    EXPECT_EQ(a.image, b.image);
    const auto c = sample(model, ctx, 32, 32, cfg, NoiseScaleConfig{}, RandomStream(4));
    EXPECT_NE(a.image, c.image);
}

TEST(Sample, GuidedPassCount) {
    const BranchPredictor model;
    GenerationContext text_only;
    text_only.items.push_back(TextItem{{1, 4, 2}});
    SamplerConfig cfg;
    cfg.steps = 5;
    EXPECT_EQ(sample(model, text_only, 32, 32, cfg, NoiseScaleConfig{}, RandomStream(1)).forward_passes, 10u);
    GenerationContext with_image = text_only;
    with_image.items.push_back(CleanImageItem{Tensor({3, 32, 32})});
    EXPECT_EQ(sample(model, with_image, 32, 32, cfg, NoiseScaleConfig{}, RandomStream(1)).forward_passes, 15u);
    cfg.gamma = 1.0;
    EXPECT_EQ(sample(model, text_only, 32, 32, cfg, NoiseScaleConfig{}, RandomStream(1)).forward_passes, 5u);
}

TEST(Sample, OutputClampedToPixelRange) {
    const OraclePredictor model(Tensor({3, 32, 32}, 3.0));
    SamplerConfig cfg;
    cfg.steps = 3;
    const auto r = sample(model, {}, 32, 32, cfg, NoiseScaleConfig{}, RandomStream(2));
    for (double v : r.image.data()) {
        ASSERT_GE(v, -1.0);
        ASSERT_LE(v, 1.0);
    }
}

TEST(Sample, GenerationSequenceLayout) {
    GenerationContext ctx;
    ctx.items.push_back(TextItem{{1, 3, 2}});
    ctx.items.push_back(CleanImageItem{Tensor({3, 32, 32})});
    const Tensor z({3, 32, 64});
    const auto full = build_generation_sequence(ctx, {true, true}, z, 0.5, 0.25).layout();
    EXPECT_EQ(format_layout(full), "T3,T1,I1x1,T1,T1,N1x2");
    const auto img_only = build_generation_sequence(ctx, {false, true}, z, 0.5, 0.25).layout();
    EXPECT_EQ(format_layout(img_only), "T1,I1x1,T1,T1,N1x2");
    const auto unc = build_generation_sequence(ctx, {false, false}, z, 0.5, 0.25).layout();
    EXPECT_EQ(format_layout(unc), "T1,T1,T1,N1x2");
}

TEST(Sample, RejectsBadConfig) {
    const BranchPredictor model;
    SamplerConfig cfg;
    cfg.steps = 0;
    EXPECT_THROW(sample(model, {}, 32, 32, cfg, NoiseScaleConfig{}, RandomStream(1)), Error);
    cfg.steps = 4;
    EXPECT_THROW(sample(model, {}, 30, 32, cfg, NoiseScaleConfig{}, RandomStream(1)), Error);
}
