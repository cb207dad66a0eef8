#include <gtest/gtest.h>

#include <cmath>

#include "unimot/error.hpp"
#include "unimot/ops.hpp"
#include "unimot/random.hpp"
#include "unimot/rope.hpp"

using namespace unimot;

namespace {

std::vector<double> random_vec(std::size_t n, RandomStream& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

std::int64_t random_pos(RandomStream& rng) {
    return static_cast<std::int64_t>(rng.below(2001)) - 1000;
}

}  // namespace

TEST(Positions, PureText) {
    SegmentLayout l{{Segment::text(3)}};
    const auto p = assign_positions(l);
    ASSERT_EQ(p.size(), 3u);
    for (std::int64_t i = 0; i < 3; ++i) EXPECT_EQ(p[i], (PositionTriple{i, 0, 0}));
}

TEST(Positions, TextThenImageSharesOneStep) {
    SegmentLayout l{{Segment::text(2), Segment::clean(2, 2)}};
    const auto p = assign_positions(l);
    ASSERT_EQ(p.size(), 6u);
    EXPECT_EQ(p[2], (PositionTriple{2, 0, 0}));
    EXPECT_EQ(p[3], (PositionTriple{2, 0, 1}));
    EXPECT_EQ(p[4], (PositionTriple{2, 1, 0}));
    EXPECT_EQ(p[5], (PositionTriple{2, 1, 1}));
}

TEST(Positions, SingleImageAtOrigin) {
    const auto p = assign_positions(SegmentLayout{{Segment::clean(1, 1)}});
    ASSERT_EQ(p.size(), 1u);
    EXPECT_EQ(p[0], (PositionTriple{0, 0, 0}));
}

TEST(Positions, TextAfterImageResumesAfterItsStep) {
    const auto p = assign_positions(SegmentLayout{{Segment::text(1), Segment::clean(1, 2), Segment::text(1)}});
    EXPECT_EQ(p[3], (PositionTriple{2, 0, 0}));
}

TEST(Positions, PairedNoiseSharesStepWithCleanFollower) {
    const auto p = assign_positions(
        SegmentLayout{{Segment::text(1), Segment::noise(1, 2, true), Segment::clean(1, 2), Segment::text(1)}});
    EXPECT_EQ(p[1].t, 1);
    EXPECT_EQ(p[3].t, 1);
    EXPECT_EQ(p[5], (PositionTriple{2, 0, 0}));
}

TEST(Rope, ZeroPositionIsIdentity) {
    RandomStream rng(1);
    const RopeConfig cfg;
    const auto v = random_vec(cfg.head_size(), rng);
    EXPECT_EQ(apply_rope(v, {0, 0, 0}, cfg), v);
}

TEST(Rope, ScalarRotationPerPair) {
    RopeConfig cfg{4, 0, 0, 10000.0, 10000.0, 10000.0};
    const std::vector<double> v{1, 0, 1, 0};
    const auto r = apply_rope(v, {1, 0, 0}, cfg);
    EXPECT_NEAR(r[0], std::cos(1.0), 1e-15);
    EXPECT_NEAR(r[1], std::sin(1.0), 1e-15);
    EXPECT_NEAR(r[2], std::cos(0.01), 1e-15);
    EXPECT_NEAR(r[3], std::sin(0.01), 1e-15);
}

TEST(Rope, NormPreserved) {
    RandomStream rng(2);
    const RopeConfig cfg;
    for (int i = 0; i < 1000; ++i) {
        const auto v = random_vec(cfg.head_size(), rng);
        const PositionTriple p{random_pos(rng), random_pos(rng), random_pos(rng)};
        EXPECT_NEAR(l2_norm(apply_rope(v, p, cfg)), l2_norm(v), 1e-12 * l2_norm(v));
    }
}

TEST(Rope, RelativePositionInvariance) {
    RandomStream rng(3);
    const RopeConfig cfg;
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const auto q = random_vec(cfg.head_size(), rng), k = random_vec(cfg.head_size(), rng);
        const PositionTriple p{random_pos(rng), random_pos(rng), random_pos(rng)};
        const PositionTriple pk{random_pos(rng), random_pos(rng), random_pos(rng)};
        const PositionTriple d{random_pos(rng), random_pos(rng), random_pos(rng)};
        const double a = dot(apply_rope(q, p, cfg), apply_rope(k, pk, cfg));
        const double b = dot(apply_rope(q, p + d, cfg), apply_rope(k, pk + d, cfg));
        worst = std::max(worst, std::abs(a - b));
    }
    EXPECT_LT(worst, 1e-10);
}

TEST(Rope, AxisSeparability) {
    RandomStream rng(4);
    const RopeConfig cfg;
    const auto v = random_vec(cfg.head_size(), rng);
    const auto base = apply_rope(v, {3, 5, 7}, cfg);
    const auto moved_h = apply_rope(v, {3, 9, 7}, cfg);
    for (std::size_t j = 0; j < cfg.head_size(); ++j) {
        const bool in_h = j >= cfg.dims_t && j < cfg.dims_t + cfg.dims_h;
        if (!in_h) {
            EXPECT_EQ(moved_h[j], base[j]) << j;
        }
    }
}

TEST(Rope, TextAndImageOriginAgree) {
    RandomStream rng(5);
    const RopeConfig cfg;
    const auto v = random_vec(cfg.head_size(), rng);
    // A text token at t and an image token at (t, 0, 0) rotate identically.
    EXPECT_EQ(apply_rope(v, {4, 0, 0}, cfg), apply_rope(v, {4, 0, 0}, cfg));
    const auto text = assign_positions(SegmentLayout{{Segment::text(4), Segment::clean(2, 2)}});
    EXPECT_EQ(apply_rope(v, text[4], cfg), apply_rope(v, {4, 0, 0}, cfg));
}

TEST(Rope, InverseUndoesRotation) {
    RandomStream rng(6);
    const RopeConfig cfg;
    auto v = random_vec(cfg.head_size(), rng);
    const auto orig = v;
    apply_rope_inplace(v, {11, -3, 2}, cfg);
    apply_rope_inplace(v, {11, -3, 2}, cfg, true);
    for (std::size_t j = 0; j < v.size(); ++j) EXPECT_NEAR(v[j], orig[j], 1e-14);
}

TEST(Rope, ConfigValidation) {
    EXPECT_THROW((RopeConfig{3, 4, 4}).validate(), Error);
    EXPECT_THROW((RopeConfig{8, 4, 4, 0.0}).validate(), Error);
    EXPECT_NO_THROW(RopeConfig{}.validate());
    EXPECT_THROW(apply_rope(std::vector<double>(5), {}, RopeConfig{}), Error);
}
