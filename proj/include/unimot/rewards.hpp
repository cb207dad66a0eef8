#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace unimot {

// Token -> multiplicity (always >= 1).
using TokenMultiset = std::map<std::string, std::size_t>;

// Whitespace split, ASCII case-folded.
TokenMultiset tokenize_multiset(std::string_view text);
std::size_t multiset_size(const TokenMultiset& m);

// |min-count intersection| / |max-count union|; 1 when both are empty.
double ocr_iou(const TokenMultiset& pred, const TokenMultiset& ref);

// Judge score 1..4 -> (s - 1) / 3.
double style_score_map(int s);

double composite_reward(double r_ocr, double r_sty, double lambda_sty);

struct ResolutionCandidate {
    std::string label;  // aspect ratio, e.g. "16:9"
    std::size_t height = 0;
    std::size_t width = 0;
    double base_prob = 0.0;
    double difficulty = 0.0;
};

// p_i * clamp((min(e / E_warm, 1) - d_i) / delta + 1, 0, 1)
double warmup_gate_factor(double epoch, double warm_epochs, double difficulty, double delta);
// Gated probabilities renormalized to sum to 1. Throws when every gate is closed.
std::vector<double> warmup_gate(std::span<const ResolutionCandidate> candidates, double epoch, double warm_epochs,
                                double delta = 0.3);

// 0.5 (area - area_min) / (area_max - area_min) + 0.5 |log(H/W)| / log(r_max),
// clamped to [0, 1]; extremes over `candidates`. A term whose range collapses is 0.
double difficulty_score(std::size_t height, std::size_t width, std::span<const ResolutionCandidate> candidates);

// Aspect ratios {1:1, 16:9, 9:16, 3:2, 2:3} x areas {1536^2, 2048^2}, sides rounded
// to multiples of 32, uniform base probabilities, difficulties filled in.
std::vector<ResolutionCandidate> default_resolution_candidates();

enum class RewardGroup { text_and_style = 1, aesthetics = 2 };

// Even epochs -> text rendering + style, odd epochs -> aesthetics.
RewardGroup reward_group_for_epoch(std::size_t epoch);

enum class ScorerKind { style, aesthetic };

const char* to_string(ScorerKind k) noexcept;

struct ScoreRequest {
    std::filesystem::path image;
    std::string prompt;
    ScorerKind kind = ScorerKind::style;
};

struct ScoreResponse {
    double score = 0.0;
    bool valid = false;
};

// External judges live behind this interface.
class Scorer {
public:
    virtual ~Scorer() = default;
    virtual ScoreResponse score(const ScoreRequest& req) const = 0;
};

// Deterministic offline stand-in: hashes image bytes, prompt and kind. Style
// scores land in {1, 2, 3, 4}; aesthetic scores in [0, 1). Unreadable images
// are reported invalid.
class StubScorer final : public Scorer {
public:
    ScoreResponse score(const ScoreRequest& req) const override;
};

// Text read back from a rendered image.
class TextExtractor {
public:
    virtual ~TextExtractor() = default;
    virtual std::optional<std::string> extract(const std::filesystem::path& image) const = 0;
};

// Reads `<stem>.ocr.txt` next to the image, as written by an external OCR run.
class SidecarTextExtractor final : public TextExtractor {
public:
    std::optional<std::string> extract(const std::filesystem::path& image) const override;
};

struct RewardRecord {
    std::string item;
    RewardGroup group = RewardGroup::text_and_style;
    std::optional<double> r_ocr;
    std::optional<double> r_sty;
    std::optional<double> r_aes;
    std::optional<double> reward;
    bool valid = false;
};

// Scans `dir` for `<stem>.ppm` with `<stem>.prompt.txt` and `<stem>.ref.txt`
// sidecars, in lexicographic order of stem.
std::vector<RewardRecord> evaluate_reward_dir(const std::filesystem::path& dir, std::size_t epoch, double lambda_sty,
                                              const Scorer& scorer, const TextExtractor& extractor);

std::string format_reward_record(const RewardRecord& r);

}  // namespace unimot
