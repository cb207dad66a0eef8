#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "unimot/unimot.h"

namespace {

void collect(const char* line, void* user) {
    static_cast<std::vector<std::string>*>(user)->emplace_back(line);
}

}  // namespace

TEST(CApi, Version) {
    EXPECT_STRNE(unimot_version(), "");
}

TEST(CApi, ParsePromptWrapsMarkers) {
    int32_t ids[8];
    size_t n = 0;
    ASSERT_EQ(unimot_parse_prompt("red square center", ids, 8, &n), UNIMOT_OK);
    ASSERT_EQ(n, 5u);
    EXPECT_EQ(ids[0], 1);
    EXPECT_EQ(ids[1], 3);
    EXPECT_EQ(ids[4], 2);
    ASSERT_EQ(unimot_parse_prompt("1 red 2", ids, 8, &n), UNIMOT_OK);
    EXPECT_EQ(n, 3u);
}

TEST(CApi, ParsePromptReportsFullCount) {
    int32_t ids[2];
    size_t n = 0;
    ASSERT_EQ(unimot_parse_prompt("red square center", ids, 2, &n), UNIMOT_OK);
    EXPECT_EQ(n, 5u);
    EXPECT_EQ(ids[0], 1);
}

TEST(CApi, ErrorsCarryMessages) {
    int32_t ids[8];
    size_t n = 0;
    EXPECT_EQ(unimot_parse_prompt("purple", ids, 8, &n), UNIMOT_ERR_INVALID_ARGUMENT);
    EXPECT_NE(std::string(unimot_last_error()).find("purple"), std::string::npos);
    EXPECT_EQ(unimot_parse_prompt(nullptr, ids, 8, &n), UNIMOT_ERR_INVALID_ARGUMENT);
    unimot_model* m = nullptr;
    EXPECT_EQ(unimot_model_load("/nonexistent/x.umot", 0, &m), UNIMOT_ERR_IO);
    EXPECT_EQ(m, nullptr);
    EXPECT_EQ(unimot_model_load(nullptr, 0, &m), UNIMOT_ERR_INVALID_ARGUMENT);
    EXPECT_EQ(unimot_model_get_info(nullptr, nullptr), UNIMOT_ERR_INVALID_ARGUMENT);
    unimot_model_free(nullptr);
}

TEST(CApi, ModelInfoAndSample) {
    unimot_model* m = nullptr;
    ASSERT_EQ(unimot_model_load(UNIMOT_FIXTURES "/fixture.umot", 1, &m), UNIMOT_OK) << unimot_last_error();
    unimot_model_info info{};
    ASSERT_EQ(unimot_model_get_info(m, &info), UNIMOT_OK);
    EXPECT_EQ(info.vocab, 17u);
    EXPECT_EQ(info.width, 12u);
    EXPECT_EQ(info.layers, 2u);
    EXPECT_EQ(info.kv_heads, 1u);
    EXPECT_EQ(info.step, 3u);
    EXPECT_GT(info.parameters, 0u);

    unimot_sampler_config cfg;
    unimot_sampler_config_default(&cfg);
    EXPECT_EQ(cfg.steps, 32u);
    cfg.steps = 2;
    const int32_t tokens[] = {1, 3, 9, 12, 2};
    std::vector<double> a(3 * 32 * 32), b(a.size());
    ASSERT_EQ(unimot_sample(m, tokens, 5, 32, 32, &cfg, a.data(), a.size()), UNIMOT_OK) << unimot_last_error();
    ASSERT_EQ(unimot_sample(m, tokens, 5, 32, 32, &cfg, b.data(), b.size()), UNIMOT_OK);
    EXPECT_EQ(a, b);
    for (double v : a) {
        ASSERT_GE(v, -1.0);
        ASSERT_LE(v, 1.0);
    }
    EXPECT_EQ(unimot_sample(m, tokens, 5, 32, 32, &cfg, a.data(), a.size() - 1), UNIMOT_ERR_SHAPE);
    const int32_t bad[] = {1, 99, 2};
    EXPECT_EQ(unimot_sample(m, bad, 3, 32, 32, &cfg, a.data(), a.size()), UNIMOT_ERR_INVALID_ARGUMENT);
    EXPECT_EQ(unimot_sample(m, tokens, 5, 30, 32, &cfg, a.data(), a.size()), UNIMOT_ERR_INVALID_ARGUMENT);
    unimot_model_free(m);
}

TEST(CApi, VerifyAndBenchStream) {
    std::vector<std::string> lines;
    size_t failed = 99;
    ASSERT_EQ(unimot_verify("rope", "", collect, &lines, &failed), UNIMOT_OK);
    EXPECT_EQ(failed, 0u);
    EXPECT_FALSE(lines.empty());
    lines.clear();
    ASSERT_EQ(unimot_verify("rope", "rope-theta", collect, &lines, &failed), UNIMOT_OK);
    EXPECT_GT(failed, 0u);
    EXPECT_EQ(unimot_verify("nope", nullptr, collect, &lines, &failed), UNIMOT_ERR_INVALID_ARGUMENT);
    lines.clear();
    ASSERT_EQ(unimot_bench("T6,I1x2", 4, 1, collect, &lines), UNIMOT_OK);
    EXPECT_FALSE(lines.empty());
    EXPECT_EQ(unimot_bench("Q1", 4, 1, collect, &lines), UNIMOT_ERR_INVALID_ARGUMENT);
}
