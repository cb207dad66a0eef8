#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace unimot {

enum class TokenType { text, clean_image, noise_image };

const char* to_string(TokenType t) noexcept;

struct Segment {
    TokenType kind = TokenType::text;
    std::size_t length = 0;  // text tokens
    std::size_t rows = 0;    // image grid
    std::size_t cols = 0;
    // Noise only: the next segment is the clean image of the same target and
    // shares this block's temporal index.
    bool paired = false;

    static Segment text(std::size_t n) { return {TokenType::text, n, 0, 0, false}; }
    static Segment clean(std::size_t r, std::size_t c) { return {TokenType::clean_image, 0, r, c, false}; }
    static Segment noise(std::size_t r, std::size_t c, bool paired = false) {
        return {TokenType::noise_image, 0, r, c, paired};
    }

    bool is_image() const noexcept { return kind != TokenType::text; }
    std::size_t size() const noexcept { return kind == TokenType::text ? length : rows * cols; }
};

struct SegmentLayout {
    std::vector<Segment> segments;

    std::size_t total() const noexcept;
    bool has_noise() const noexcept;
    // Throws on empty segments or a paired noise block without a matching clean follower.
    void validate() const;
    std::vector<TokenType> token_types() const;
    // Start offset of each segment.
    std::vector<std::size_t> offsets() const;
};

// Compact text form used by the CLI: comma-separated items
//   T<n>          text run of n tokens
//   I<r>x<c>      clean image grid
//   N<r>x<c>[p]   noise image grid, optional 'p' = paired with the next clean image
SegmentLayout parse_layout(std::string_view spec);
std::string format_layout(const SegmentLayout& layout);

}  // namespace unimot
