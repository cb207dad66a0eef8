#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "unimot/error.hpp"
#include "unimot/patch_codec.hpp"
#include "unimot/rewards.hpp"

using namespace unimot;

namespace {

// |∩| and |∪| by counting each distinct token directly in both lists.
double brute_iou(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::string> keys = a;
    keys.insert(keys.end(), b.begin(), b.end());
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    std::size_t inter = 0, uni = 0;
    for (const auto& k : keys) {
        const auto ca = static_cast<std::size_t>(std::count(a.begin(), a.end(), k));
        const auto cb = static_cast<std::size_t>(std::count(b.begin(), b.end(), k));
        inter += std::min(ca, cb);
        uni += std::max(ca, cb);
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& w : v) s += w + " ";
    return s;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "unimot_rewards_XXXXXX").string();
        path = mkdtemp(tmpl.data());
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

void write_file(const std::filesystem::path& p, const std::string& s) {
    std::ofstream(p) << s;
}

}  // namespace

TEST(OcrIou, Examples) {
    EXPECT_EQ(ocr_iou(tokenize_multiset("a b b"), tokenize_multiset("b a b")), 1.0);
    EXPECT_EQ(ocr_iou(tokenize_multiset("a b"), tokenize_multiset("c d")), 0.0);
    EXPECT_EQ(ocr_iou(tokenize_multiset("hello world world"), tokenize_multiset("hello world")), 2.0 / 3.0);
    EXPECT_EQ(ocr_iou(tokenize_multiset(""), tokenize_multiset("  ")), 1.0);
    EXPECT_EQ(ocr_iou(tokenize_multiset("Hello"), tokenize_multiset("hELLO")), 1.0);
}

TEST(OcrIou, MatchesBruteForce) {
    RandomStream rng(1);
    const char* vocab[] = {"a", "b", "c", "d", "e", "f"};
    for (int i = 0; i < 1000; ++i) {
        std::vector<std::string> a(rng.below(8)), b(rng.below(8));
        for (auto& w : a) w = vocab[rng.below(6)];
        for (auto& w : b) w = vocab[rng.below(6)];
        ASSERT_EQ(ocr_iou(tokenize_multiset(join(a)), tokenize_multiset(join(b))), brute_iou(a, b));
    }
}

TEST(StyleMap, Endpoints) {
    EXPECT_EQ(style_score_map(1), 0.0);
    EXPECT_EQ(style_score_map(4), 1.0);
    EXPECT_EQ(style_score_map(2), 1.0 / 3.0);
    EXPECT_THROW(style_score_map(0), Error);
    EXPECT_THROW(style_score_map(5), Error);
}

TEST(Composite, Arithmetic) {
    EXPECT_EQ(composite_reward(0.6, 0.0, 0.5), 0.6);
    EXPECT_EQ(composite_reward(0.6, 0.8, 0.5), 1.0);
    EXPECT_EQ(composite_reward(0.0, 0.0, 0.5), 0.0);
    EXPECT_THROW(composite_reward(0.1, 0.1, -1.0), Error);
}

TEST(WarmupGate, FormulaCases) {
    EXPECT_EQ(warmup_gate_factor(0, 10, 0.0, 0.3), 1.0);
    EXPECT_EQ(warmup_gate_factor(0, 10, 0.5, 0.3), 0.0);
    EXPECT_EQ(warmup_gate_factor(10, 10, 1.0, 0.3), 1.0);
    EXPECT_EQ(warmup_gate_factor(25, 10, 0.7, 0.3), 1.0);
    EXPECT_NEAR(warmup_gate_factor(5, 10, 0.6, 0.3), 2.0 / 3.0, 1e-15);
}

TEST(WarmupGate, RenormalizesGatedProbabilities) {
    const ResolutionCandidate c[] = {{"a", 32, 32, 0.5, 0.0}, {"b", 32, 32, 0.3, 0.5}, {"c", 32, 32, 0.2, 0.6}};
    const auto p = warmup_gate(c, 0, 10, 0.3);
    EXPECT_EQ(p, (std::vector<double>{1.0, 0.0, 0.0}));
    const auto q = warmup_gate(c, 5, 10, 0.3);
    const double f1 = 1.0, f2 = 1.0, f3 = (0.5 - 0.6) / 0.3 + 1.0;
    const double total = 0.5 * f1 + 0.3 * f2 + 0.2 * f3;
    EXPECT_NEAR(q[0], 0.5 / total, 1e-15);
    EXPECT_NEAR(q[2], 0.2 * f3 / total, 1e-15);
}

TEST(WarmupGate, ReturnsBaseAfterWarmupExactly) {
    const auto cands = default_resolution_candidates();
    for (double e : {10.0, 11.0, 500.0}) EXPECT_EQ(warmup_gate(cands, e, 10), std::vector<double>(cands.size(), 0.1));
}

TEST(WarmupGate, AllClosedThrows) {
    const ResolutionCandidate c[] = {{"a", 32, 32, 1.0, 0.9}};
    EXPECT_THROW(warmup_gate(c, 0, 10, 0.3), Error);
}

TEST(Difficulty, DefaultCandidates) {
    const auto cands = default_resolution_candidates();
    ASSERT_EQ(cands.size(), 10u);
    std::size_t easiest = 0, hardest = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
        const auto& c = cands[i];
        EXPECT_GE(c.difficulty, 0.0);
        EXPECT_LE(c.difficulty, 1.0);
        EXPECT_EQ(c.height % 32, 0u);
        EXPECT_EQ(c.width % 32, 0u);
        if (c.difficulty < cands[easiest].difficulty) easiest = i;
        if (c.difficulty > cands[hardest].difficulty) hardest = i;
    }
    EXPECT_EQ(cands[easiest].label, "1:1");
    EXPECT_EQ(cands[easiest].height, 1536u);
    EXPECT_EQ(cands[hardest].label, "16:9");
    EXPECT_EQ(cands[hardest].width, 2720u);
    for (const auto& a : cands) {
        for (const auto& b : cands) {
            if (a.height == b.width && a.width == b.height) {
                EXPECT_NEAR(a.difficulty, b.difficulty, 1e-15) << a.label;
            }
        }
    }
}

TEST(Difficulty, MidAreaSquare) {
    const ResolutionCandidate c[] = {{"s", 32, 32, 0, 0}, {"l", 96, 96, 0, 0}, {"w", 32, 64, 0, 0}};
    const double area_frac = (64.0 * 64 - 32.0 * 32) / (96.0 * 96 - 32.0 * 32);
    EXPECT_NEAR(difficulty_score(64, 64, c), 0.5 * area_frac, 1e-15);
}

TEST(RewardGroup, Parity) {
    EXPECT_EQ(reward_group_for_epoch(0), RewardGroup::text_and_style);
    EXPECT_EQ(reward_group_for_epoch(1), RewardGroup::aesthetics);
    for (std::size_t e = 0; e < 100; ++e) EXPECT_EQ(reward_group_for_epoch(e), reward_group_for_epoch(e + 2));
}

TEST(RewardDir, ScoresSidecars) {
    TempDir dir;
    Tensor img({3, 32, 32}, 0.25);
    write_ppm(dir.path / "a.ppm", img);
    write_file(dir.path / "a.prompt.txt", "a sign that says hello world\n");
    write_file(dir.path / "a.ref.txt", "hello world");
    write_file(dir.path / "a.ocr.txt", "hello world world");
    write_ppm(dir.path / "b.ppm", img);
    write_file(dir.path / "notes.txt", "ignored");

    const StubScorer scorer;
    const SidecarTextExtractor ocr;
    const auto even = evaluate_reward_dir(dir.path, 0, 0.5, scorer, ocr);
    ASSERT_EQ(even.size(), 2u);
    EXPECT_EQ(even[0].item, "a");
    EXPECT_EQ(even[0].r_ocr, 2.0 / 3.0);
    ASSERT_TRUE(even[0].r_sty.has_value());
    EXPECT_EQ(*even[0].reward, 2.0 / 3.0 + 0.5 * *even[0].r_sty);
    EXPECT_TRUE(even[0].valid);
    EXPECT_FALSE(even[1].valid);

    const auto odd = evaluate_reward_dir(dir.path, 1, 0.5, scorer, ocr);
    EXPECT_EQ(odd[0].group, RewardGroup::aesthetics);
    ASSERT_TRUE(odd[0].r_aes.has_value());
    EXPECT_GE(*odd[0].r_aes, 0.0);
    EXPECT_LT(*odd[0].r_aes, 1.0);

    const auto again = evaluate_reward_dir(dir.path, 0, 0.5, scorer, ocr);
    EXPECT_EQ(format_reward_record(again[0]), format_reward_record(even[0]));

    const auto j = nlohmann::json::parse(format_reward_record(even[1]));
    EXPECT_TRUE(j["reward"].is_null());
    EXPECT_EQ(j["valid"], false);
}

TEST(RewardDir, MissingDirectory) {
    const StubScorer scorer;
    const SidecarTextExtractor ocr;
    EXPECT_THROW(evaluate_reward_dir("/nonexistent/unimot", 0, 0.5, scorer, ocr), Error);
}
