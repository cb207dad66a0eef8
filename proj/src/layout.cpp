#include "unimot/layout.hpp"

#include <charconv>

#include "unimot/error.hpp"

namespace unimot {

const char* to_string(TokenType t) noexcept {
    switch (t) {
        case TokenType::text: return "text";
        case TokenType::clean_image: return "clean_image";
        case TokenType::noise_image: return "noise_image";
    }
    return "?";
}

std::size_t SegmentLayout::total() const noexcept {
    std::size_t n = 0;
    for (const auto& s : segments) n += s.size();
    return n;
}

bool SegmentLayout::has_noise() const noexcept {
    for (const auto& s : segments) {
        if (s.kind == TokenType::noise_image) return true;
    }
    return false;
}

void SegmentLayout::validate() const {
    require(!segments.empty(), ErrorCode::invalid_argument, "layout has no segments");
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const auto& s = segments[i];
        require(s.size() > 0, ErrorCode::invalid_argument, "layout segment " + std::to_string(i) + " is empty");
        if (s.kind == TokenType::noise_image && s.paired) {
            require(i + 1 < segments.size() && segments[i + 1].kind == TokenType::clean_image &&
                        segments[i + 1].rows == s.rows && segments[i + 1].cols == s.cols,
                    ErrorCode::invalid_argument,
                    "paired noise segment " + std::to_string(i) + " must be followed by a clean image of the same grid");
        }
    }
}

std::vector<TokenType> SegmentLayout::token_types() const {
    std::vector<TokenType> types;
    types.reserve(total());
    for (const auto& s : segments) types.insert(types.end(), s.size(), s.kind);
    return types;
}

std::vector<std::size_t> SegmentLayout::offsets() const {
    std::vector<std::size_t> off;
    std::size_t at = 0;
    for (const auto& s : segments) {
        off.push_back(at);
        at += s.size();
    }
    return off;
}

namespace {

std::size_t parse_count(std::string_view& s, std::string_view whole) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc() && v > 0, ErrorCode::invalid_argument, "bad layout spec '" + std::string(whole) + "'");
    s.remove_prefix(static_cast<std::size_t>(ptr - s.data()));
    return v;
}

}  // namespace

SegmentLayout parse_layout(std::string_view spec) {
    SegmentLayout layout;
    while (!spec.empty()) {
        const auto comma = spec.find(',');
        std::string_view item = spec.substr(0, comma);
        spec = comma == std::string_view::npos ? std::string_view{} : spec.substr(comma + 1);
        const std::string_view whole = item;
        require(!item.empty(), ErrorCode::invalid_argument, "empty item in layout spec");
        const char kind = item.front();
        item.remove_prefix(1);
        if (kind == 'T' || kind == 't') {
            layout.segments.push_back(Segment::text(parse_count(item, whole)));
        } else if (kind == 'I' || kind == 'i' || kind == 'N' || kind == 'n') {
            const std::size_t r = parse_count(item, whole);
            require(!item.empty() && item.front() == 'x', ErrorCode::invalid_argument,
                    "image item needs <rows>x<cols>: '" + std::string(whole) + "'");
            item.remove_prefix(1);
            const std::size_t c = parse_count(item, whole);
            bool paired = false;
            if (!item.empty() && item.front() == 'p' && (kind == 'N' || kind == 'n')) {
                paired = true;
                item.remove_prefix(1);
            }
            layout.segments.push_back(kind == 'I' || kind == 'i' ? Segment::clean(r, c) : Segment::noise(r, c, paired));
        } else {
            fail(ErrorCode::invalid_argument, "unknown layout item '" + std::string(whole) + "'");
        }
        require(item.empty(), ErrorCode::invalid_argument, "trailing characters in layout item '" + std::string(whole) + "'");
    }
    layout.validate();
    return layout;
}

std::string format_layout(const SegmentLayout& layout) {
    std::string out;
    for (const auto& s : layout.segments) {
        if (!out.empty()) out += ',';
        switch (s.kind) {
            case TokenType::text: out += 'T' + std::to_string(s.length); break;
            case TokenType::clean_image: out += 'I' + std::to_string(s.rows) + 'x' + std::to_string(s.cols); break;
            case TokenType::noise_image:
                out += 'N' + std::to_string(s.rows) + 'x' + std::to_string(s.cols) + (s.paired ? "p" : "");
                break;
        }
    }
    return out;
}

}  // namespace unimot
