#include "unimot/rewards.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <sstream>

#include "unimot/error.hpp"

namespace unimot {

TokenMultiset tokenize_multiset(std::string_view text) {
    TokenMultiset m;
    std::string tok;
    auto flush = [&] {
        if (!tok.empty()) ++m[tok];
        tok.clear();
    };
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else {
            tok.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    flush();
    return m;
}

std::size_t multiset_size(const TokenMultiset& m) {
    std::size_t n = 0;
    for (const auto& [_, c] : m) n += c;
    return n;
}

double ocr_iou(const TokenMultiset& pred, const TokenMultiset& ref) {
    std::size_t inter = 0, uni = 0;
    auto a = pred.begin(), b = ref.begin();
    while (a != pred.end() || b != ref.end()) {
        if (b == ref.end() || (a != pred.end() && a->first < b->first)) {
            uni += a->second;
            ++a;
        } else if (a == pred.end() || b->first < a->first) {
            uni += b->second;
            ++b;
        } else {
            inter += std::min(a->second, b->second);
            uni += std::max(a->second, b->second);
            ++a;
            ++b;
        }
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double style_score_map(int s) {
    require(s >= 1 && s <= 4, ErrorCode::invalid_argument, "style score " + std::to_string(s) + " outside 1..4");
    return static_cast<double>(s - 1) / 3.0;
}

double composite_reward(double r_ocr, double r_sty, double lambda_sty) {
    require(lambda_sty >= 0.0, ErrorCode::invalid_argument, "lambda_sty must be nonnegative");
    return r_ocr + lambda_sty * r_sty;
}

double warmup_gate_factor(double epoch, double warm_epochs, double difficulty, double delta) {
    require(warm_epochs >= 1.0, ErrorCode::invalid_argument, "warmup needs E_warm >= 1");
    require(delta > 0.0, ErrorCode::invalid_argument, "warmup margin delta must be positive");
    require(epoch >= 0.0, ErrorCode::invalid_argument, "epoch must be nonnegative");
    const double progress = std::min(epoch / warm_epochs, 1.0);
    return std::clamp((progress - difficulty) / delta + 1.0, 0.0, 1.0);
}

std::vector<double> warmup_gate(std::span<const ResolutionCandidate> candidates, double epoch, double warm_epochs,
                                double delta) {
    require(!candidates.empty(), ErrorCode::invalid_argument, "warmup_gate: no candidates");
    std::vector<double> p(candidates.size());
    double total = 0.0, base_total = 0.0;
    bool all_open = true;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const double f = warmup_gate_factor(epoch, warm_epochs, candidates[i].difficulty, delta);
        all_open = all_open && f == 1.0;
        p[i] = candidates[i].base_prob * f;
        total += p[i];
        base_total += candidates[i].base_prob;
    }
    require(total > 0.0, ErrorCode::invalid_argument,
            "warmup_gate: every candidate is gated out at epoch " + std::to_string(epoch));
    // Open gates hand back the base distribution untouched.
    if (all_open && std::abs(base_total - 1.0) <= 1e-12) return p;
    for (double& v : p) v /= total;
    return p;
}

double difficulty_score(std::size_t height, std::size_t width, std::span<const ResolutionCandidate> candidates) {
    require(height > 0 && width > 0, ErrorCode::invalid_argument, "difficulty_score: empty resolution");
    double area_min = static_cast<double>(height * width), area_max = area_min;
    double log_ratio_max = 0.0;
    for (const auto& c : candidates) {
        const double a = static_cast<double>(c.height * c.width);
        area_min = std::min(area_min, a);
        area_max = std::max(area_max, a);
        log_ratio_max = std::max(
            log_ratio_max, std::abs(std::log(static_cast<double>(c.height) / static_cast<double>(c.width))));
    }
    const double area = static_cast<double>(height * width);
    const double area_term = area_max > area_min ? (area - area_min) / (area_max - area_min) : 0.0;
    const double ratio_term = log_ratio_max > 0.0
                                  ? std::abs(std::log(static_cast<double>(height) / static_cast<double>(width))) /
                                        log_ratio_max
                                  : 0.0;
    return std::clamp(0.5 * area_term + 0.5 * ratio_term, 0.0, 1.0);
}

std::vector<ResolutionCandidate> default_resolution_candidates() {
    const std::pair<const char*, std::pair<int, int>> ratios[] = {
        {"1:1", {1, 1}}, {"16:9", {16, 9}}, {"9:16", {9, 16}}, {"3:2", {3, 2}}, {"2:3", {2, 3}}};
    const double sides[] = {1536.0, 2048.0};
    std::vector<ResolutionCandidate> out;
    for (double side : sides) {
        for (const auto& [label, r] : ratios) {
            // width / height = r.first / r.second at area side^2
            const double aspect = static_cast<double>(r.first) / static_cast<double>(r.second);
            const double w = side * std::sqrt(aspect);
            const double h = side / std::sqrt(aspect);
            auto round32 = [](double v) { return static_cast<std::size_t>(std::lround(v / 32.0)) * 32; };
            out.push_back({label, round32(h), round32(w), 0.0, 0.0});
        }
    }
    for (auto& c : out) {
        c.base_prob = 1.0 / static_cast<double>(out.size());
        c.difficulty = difficulty_score(c.height, c.width, out);
    }
    return out;
}

RewardGroup reward_group_for_epoch(std::size_t epoch) {
    return epoch % 2 == 0 ? RewardGroup::text_and_style : RewardGroup::aesthetics;
}

const char* to_string(ScorerKind k) noexcept {
    return k == ScorerKind::style ? "style" : "aesthetic";
}

namespace {

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::optional<std::string> slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return std::nullopt;
    return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string trimmed(std::string s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    std::size_t b = 0;
    while (b < s.size() && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    return s.substr(b);
}

}  // namespace

ScoreResponse StubScorer::score(const ScoreRequest& req) const {
    auto bytes = slurp(req.image);
    if (!bytes) return {0.0, false};
    std::uint64_t h = fnv1a(*bytes);
    h = fnv1a(req.prompt, h);
    h = fnv1a(to_string(req.kind), h);
    if (req.kind == ScorerKind::style) return {static_cast<double>(1 + h % 4), true};
    return {static_cast<double>(h >> 11) * 0x1.0p-53, true};
}

std::optional<std::string> SidecarTextExtractor::extract(const std::filesystem::path& image) const {
    auto p = image;
    p.replace_extension(".ocr.txt");
    return slurp(p);
}

std::vector<RewardRecord> evaluate_reward_dir(const std::filesystem::path& dir, std::size_t epoch, double lambda_sty,
                                              const Scorer& scorer, const TextExtractor& extractor) {
    require(std::filesystem::is_directory(dir), ErrorCode::io, dir.string() + " is not a directory");
    std::vector<std::filesystem::path> images;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".ppm") images.push_back(e.path());
    }
    std::sort(images.begin(), images.end());

    const RewardGroup group = reward_group_for_epoch(epoch);
    std::vector<RewardRecord> out;
    for (const auto& img : images) {
        RewardRecord r;
        r.item = img.stem().string();
        r.group = group;
        auto side = [&](const char* ext) {
            auto p = img;
            p.replace_extension(ext);
            return slurp(p);
        };
        const auto prompt = side(".prompt.txt");
        if (group == RewardGroup::text_and_style) {
            const auto ref = side(".ref.txt");
            const auto seen = extractor.extract(img);
            if (ref && seen) r.r_ocr = ocr_iou(tokenize_multiset(*seen), tokenize_multiset(*ref));
            if (prompt) {
                auto s = scorer.score({img, trimmed(*prompt), ScorerKind::style});
                const double rounded = std::round(s.score);
                if (s.valid && rounded >= 1.0 && rounded <= 4.0) r.r_sty = style_score_map(static_cast<int>(rounded));
            }
            if (r.r_ocr && r.r_sty) r.reward = composite_reward(*r.r_ocr, *r.r_sty, lambda_sty);
        } else if (prompt) {
            auto s = scorer.score({img, trimmed(*prompt), ScorerKind::aesthetic});
            if (s.valid) {
                r.r_aes = s.score;
                r.reward = s.score;
            }
        }
        r.valid = r.reward.has_value();
        out.push_back(std::move(r));
    }
    return out;
}

std::string format_reward_record(const RewardRecord& r) {
    nlohmann::ordered_json j;
    j["item"] = r.item;
    j["group"] = static_cast<int>(r.group);
    auto opt = [&](const char* k, const std::optional<double>& v) {
        j[k] = v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    };
    opt("r_ocr", r.r_ocr);
    opt("r_sty", r.r_sty);
    opt("r_aes", r.r_aes);
    opt("reward", r.reward);
    j["valid"] = r.valid;
    return j.dump();
}

}  // namespace unimot
