#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "unimot/checkpoint.hpp"
#include "unimot/config.hpp"
#include "unimot/dataset.hpp"
#include "unimot/error.hpp"
#include "unimot/ops.hpp"
#include "unimot/train.hpp"
#include "unimot/verify.hpp"

using namespace unimot;

namespace {

TrainConfig tiny_config() {
    TrainConfig c = load_config(UNIMOT_FIXTURES "/fixture.cfg");
    c.steps = 2;
    return c;
}

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorCode::invalid_argument;
}

TokenSequence probe_sequence(const TrainConfig& c) {
    TokenSequence seq;
    seq.items.push_back(TextItem{{1, 3, 11, 14, 2}});
    seq.items.push_back(MarkerItem{Marker::image_open});
    Tensor z({3, c.data.height, c.data.width});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = std::sin(0.3 * double(i));
    seq.items.push_back(NoiseImageItem{z, 0.4, 0.25, false});
    return seq;
}

}  // namespace

TEST(Dataset, GoldenHash) {
    const auto data = make_dataset({7, 8, 64, 64});
    EXPECT_EQ(dataset_hash(data), 2279199020837077712ULL);
}

TEST(Dataset, CenterPixelHasNamedColor) {
    const auto data = make_dataset({11, 40, 64, 64});
    for (const auto& ex : data) {
        ASSERT_EQ(ex.caption.size(), 5u);
        EXPECT_EQ(ex.caption[0], Vocabulary::bos);
        EXPECT_EQ(ex.caption[1], Vocabulary::color_id(ex.color));
        EXPECT_EQ(ex.caption[2], Vocabulary::shape_id(ex.shape));
        EXPECT_EQ(ex.caption[3], Vocabulary::position_id(ex.position));
        EXPECT_EQ(ex.caption[4], Vocabulary::eos);
        const auto [r, c] = position_center(ex.position, 64, 64);
        const auto rgb = Vocabulary::rgb(ex.color);
        for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(ex.image[(ch * 64 + r) * 64 + c], rgb[ch]);
        EXPECT_EQ(ex.image[0], kBackground);
    }
}

TEST(Dataset, DeterministicAndSeedSensitive) {
    EXPECT_EQ(dataset_hash(make_dataset({3, 16, 32, 32})), dataset_hash(make_dataset({3, 16, 32, 32})));
    EXPECT_NE(dataset_hash(make_dataset({3, 16, 32, 32})), dataset_hash(make_dataset({4, 16, 32, 32})));
}

TEST(Dataset, PromptParsing) {
    EXPECT_EQ(parse_prompt("red square center"), (std::vector<int>{3, 9, 12}));
    EXPECT_EQ(parse_prompt("1 red 2"), (std::vector<int>{1, 3, 2}));
    EXPECT_EQ(Vocabulary::size(), 17u);
    EXPECT_THROW(parse_prompt("purple"), Error);
    EXPECT_EQ(parse_prompt("99"), (std::vector<int>{99}));
}

TEST(Config, RoundTrip) {
    const auto c = load_config(UNIMOT_FIXTURES "/fixture.cfg");
    const auto text = format_config(c);
    EXPECT_EQ(format_config(parse_config(text)), text);
    EXPECT_EQ(config_schema().size(), 34u);
}

TEST(Config, Rejections) {
    EXPECT_EQ(code_of([] { parse_config("bogus.key = 1\n"); }), ErrorCode::format);
    EXPECT_EQ(code_of([] { parse_config("train.steps = abc\n"); }), ErrorCode::format);
    EXPECT_EQ(code_of([] { parse_config("train.steps\n"); }), ErrorCode::format);
    EXPECT_EQ(code_of([] { load_config("/nonexistent/x.cfg"); }), ErrorCode::io);
}

TEST(Config, CommentsAndDefaults) {
    const auto c = parse_config("# comment only\n\n");
    EXPECT_EQ(format_config(c), format_config(TrainConfig{}));
}

TEST(Checkpoint, RoundTripIsBitwise) {
    const auto cfg = tiny_config();
    const auto data = make_dataset(cfg.data);
    const auto ck = train(cfg, data);
    const auto bytes = serialize_checkpoint(ck);
    const auto back = deserialize_checkpoint(bytes);
    EXPECT_EQ(serialize_checkpoint(back), bytes);
    EXPECT_EQ(back.step, 2u);
    EXPECT_EQ(back.rng, ck.rng);
    const auto seq = probe_sequence(cfg);
    const auto a = model_forward(seq, ck.params);
    const auto b = model_forward(seq, back.params);
    EXPECT_EQ(a.text_logits, b.text_logits);
    EXPECT_EQ(a.x_hat[0], b.x_hat[0]);
    EXPECT_EQ(model_forward(seq, ck.ema).text_logits, model_forward(seq, back.ema).text_logits);
}

TEST(Checkpoint, CorruptionIsDetected) {
    const auto ck = initial_checkpoint(tiny_config());
    const auto bytes = serialize_checkpoint(ck);
    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    EXPECT_EQ(code_of([&] { deserialize_checkpoint(flipped); }), ErrorCode::checksum);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 7);
    EXPECT_NE(code_of([&] { deserialize_checkpoint(truncated); }), ErrorCode::invalid_argument);
    auto magic = bytes;
    magic[0] = 'X';
    EXPECT_EQ(code_of([&] { deserialize_checkpoint(magic); }), ErrorCode::format);
    EXPECT_EQ(code_of([] { load_checkpoint("/nonexistent/a.umot"); }), ErrorCode::io);
}

TEST(Checkpoint, VersionMismatch) {
    auto bytes = serialize_checkpoint(initial_checkpoint(tiny_config()));
    bytes[8] = 2;
    // Recompute the trailing CRC so only the version differs.
    const std::size_t n = bytes.size() - 4;
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i) {
        crc ^= bytes[i];
        for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
    }
    crc ^= 0xFFFFFFFFu;
    for (int k = 0; k < 4; ++k) bytes[n + k] = static_cast<unsigned char>(crc >> (8 * k));
    EXPECT_EQ(code_of([&] { deserialize_checkpoint(bytes); }), ErrorCode::version);
}

TEST(Checkpoint, FixtureLoads) {
    const auto ck = load_checkpoint(UNIMOT_FIXTURES "/fixture.umot");
    EXPECT_EQ(ck.step, 3u);
    EXPECT_EQ(ck.params.cfg.width, 12u);
}

TEST(Ema, Examples) {
    Tensor s({1}, 0.0);
    ema_update(s, Tensor({1}, 1.0), 0.9);
    EXPECT_NEAR(s[0], 0.1, 1e-16);
    ema_update(s, Tensor({1}, 1.0), 0.9);
    EXPECT_NEAR(s[0], 0.19, 1e-16);
    Tensor z({1}, 5.0);
    ema_update(z, Tensor({1}, -3.0), 0.0);
    EXPECT_EQ(z[0], -3.0);
    EXPECT_THROW(ema_update(z, Tensor({1}, 1.0), 1.0), Error);
    EXPECT_THROW(ema_update(z, Tensor({2}), 0.5), Error);
}

TEST(Clip, Examples) {
    std::vector<Tensor> g{Tensor::vector({3, 0}), Tensor::vector({4})};
    EXPECT_EQ(clip_grad_norm(g, 1.0), 5.0);
    EXPECT_NEAR(g[0][0], 0.6, 1e-15);
    EXPECT_NEAR(g[1][0], 0.8, 1e-15);
    std::vector<Tensor> small{Tensor::vector({0.3, 0.4})};
    EXPECT_NEAR(clip_grad_norm(small, 1.0), 0.5, 1e-16);
    EXPECT_EQ(small[0], Tensor::vector({0.3, 0.4}));
    EXPECT_THROW(clip_grad_norm(small, 0.0), Error);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
    const auto cfg = tiny_config();
    auto params = init_model(cfg.model, RandomStream(1));
    const auto before = params;
    OptimizerConfig oc;
    oc.lr = 0.01;
    oc.eps = 0.0;
    AdamW opt(params, oc);
    std::vector<Tensor> grads;
    params.for_each([&](const std::string&, const Tensor& t) { grads.emplace_back(t.shape(), -2.5); });
    opt.step(params, grads);
    EXPECT_EQ(opt.steps_taken(), 1u);
    EXPECT_NEAR(params.tok_embed[0] - before.tok_embed[0], 0.01, 1e-15);
    EXPECT_NEAR(params.text_head[3] - before.text_head[3], 0.01, 1e-15);
}

TEST(AdamW, WeightDecayShrinksWithZeroGradient) {
    const auto cfg = tiny_config();
    auto params = init_model(cfg.model, RandomStream(2));
    const auto before = params;
    OptimizerConfig oc;
    oc.lr = 0.1;
    oc.weight_decay = 0.5;
    AdamW opt(params, oc);
    std::vector<Tensor> grads;
    params.for_each([&](const std::string&, const Tensor& t) { grads.emplace_back(t.shape()); });
    opt.step(params, grads);
    EXPECT_NEAR(params.tok_embed[5], before.tok_embed[5] * 0.95, 1e-15);
}

TEST(Train, ZeroStepsIsInitialization) {
    auto cfg = tiny_config();
    cfg.steps = 0;
    const auto ck = train(cfg, make_dataset(cfg.data));
    const auto init = initial_checkpoint(cfg);
    EXPECT_EQ(serialize_checkpoint(ck), serialize_checkpoint(init));
}

TEST(Train, TwoRunsAreBitwiseEqual) {
    const auto cfg = tiny_config();
    const auto data = make_dataset(cfg.data);
    std::vector<StepMetrics> ma, mb;
    const auto a = train(cfg, data, [&](const StepMetrics& m) { ma.push_back(m); });
    const auto b = train(cfg, data, [&](const StepMetrics& m) { mb.push_back(m); }, 2);
    EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));
    ASSERT_EQ(ma.size(), 2u);
    for (std::size_t i = 0; i < ma.size(); ++i) EXPECT_EQ(format_metrics(ma[i]), format_metrics(mb[i]));
}

TEST(Train, RejectsMismatchedData) {
    const auto cfg = tiny_config();
    EXPECT_THROW(train(cfg, make_dataset({1, 2, 64, 64})), Error);
    EXPECT_THROW(train(cfg, std::vector<Example>{}), Error);
}

TEST(Metrics, FormatParse) {
    const StepMetrics m{17, 1.25, 0.5, 1.75, 0.125};
    const auto line = format_metrics(m);
    EXPECT_EQ(line.find('\n'), std::string::npos);
    const auto back = parse_metrics(line);
    EXPECT_EQ(back.step, 17u);
    EXPECT_EQ(back.ce, 1.25);
    EXPECT_EQ(back.mse, 0.5);
    EXPECT_EQ(back.total, 1.75);
    EXPECT_EQ(back.grad_norm, 0.125);
    const StepMetrics odd{1, 0.1 + 0.2, 1.0 / 3.0, 2e-300, 12345.678901234567};
    EXPECT_EQ(format_metrics(parse_metrics(format_metrics(odd))), format_metrics(odd));
    EXPECT_EQ(parse_metrics(format_metrics(odd)).ce, 0.1 + 0.2);
    EXPECT_THROW(parse_metrics("{\"step\":1}"), Error);
}

TEST(Report, RoundTrip) {
    const CheckResult r{"rope", "relative invariance", true, 1.5e-13, 1e-10, "30 probes"};
    EXPECT_EQ(parse_check(format_check(r)), r);
    CheckResult nan = r;
    nan.measured = std::nan("");
    nan.passed = false;
    const auto back = parse_check(format_check(nan));
    EXPECT_TRUE(std::isnan(back.measured));
    EXPECT_FALSE(back.passed);
}

TEST(Report, Faults) {
    EXPECT_FALSE(parse_faults("").any());
    EXPECT_TRUE(parse_faults("rope-theta").rope_theta);
    const auto both = parse_faults("rope-theta,noise-leak");
    EXPECT_TRUE(both.rope_theta && both.noise_leak);
    EXPECT_THROW(parse_faults("gremlins"), Error);
    EXPECT_EQ(fault_names().size(), 2u);
}

TEST(Suite, CleanModulesPass) {
    for (const char* mod : {"numerics", "rope", "attention", "flow_matching"}) {
        const auto results = run_invariant_suite(mod);
        ASSERT_FALSE(results.empty()) << mod;
        for (const auto& r : results) EXPECT_TRUE(r.passed) << r.module << ": " << r.name << " " << r.detail;
    }
    EXPECT_THROW(run_invariant_suite("nope"), Error);
}

TEST(Suite, FaultsAreCaught) {
    auto failed = [](std::string_view mod, const char* fault) {
        std::size_t n = 0;
        for (const auto& r : run_invariant_suite(mod, parse_faults(fault))) n += r.passed ? 0 : 1;
        return n;
    };
    EXPECT_GT(failed("rope", "rope-theta"), 0u);
    EXPECT_GT(failed("attention", "noise-leak"), 0u);
}

TEST(Threads, FromEnvironment) {
    unsetenv("UNIMOT_THREADS");
    EXPECT_EQ(thread_count_from_env(), 1u);
    setenv("UNIMOT_THREADS", "3", 1);
    EXPECT_EQ(thread_count_from_env(), 3u);
    setenv("UNIMOT_THREADS", "zero", 1);
    EXPECT_THROW(thread_count_from_env(), Error);
    setenv("UNIMOT_THREADS", "0", 1);
    EXPECT_THROW(thread_count_from_env(), Error);
    unsetenv("UNIMOT_THREADS");
}
