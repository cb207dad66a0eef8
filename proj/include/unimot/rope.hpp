#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "unimot/autograd.hpp"
#include "unimot/layout.hpp"

namespace unimot {

struct PositionTriple {
    std::int64_t t = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;

    friend bool operator==(const PositionTriple&, const PositionTriple&) = default;
    PositionTriple operator+(const PositionTriple& o) const { return {t + o.t, h + o.h, w + o.w}; }
};

// Head dimensions split into consecutive T, H, W slices; pairs within a slice are
// adjacent (2i, 2i+1) and rotate at pos * theta^(-2i / dims).
struct RopeConfig {
    std::size_t dims_t = 8;
    std::size_t dims_h = 4;
    std::size_t dims_w = 4;
    double theta_t = 5'000'000.0;
    double theta_h = 10'000.0;
    double theta_w = 10'000.0;

    std::size_t head_size() const noexcept { return dims_t + dims_h + dims_w; }
    void validate() const;
};

// Text tokens advance t by one each with h = w = 0. An image segment consumes one
// t step shared by all its tokens and enumerates (h, w) over its grid. A paired
// noise segment hands its t to the clean image that follows it.
std::vector<PositionTriple> assign_positions(const SegmentLayout& layout);

std::vector<double> apply_rope(std::span<const double> vec, const PositionTriple& pos, const RopeConfig& cfg);
void apply_rope_inplace(std::span<double> vec, const PositionTriple& pos, const RopeConfig& cfg, bool inverse = false);

// Rotates every head of every row of x: [n, heads * head_size].
ad::Var rope(ad::Tape& tape, ad::Var x, std::span<const PositionTriple> positions, const RopeConfig& cfg,
             std::size_t heads);

}  // namespace unimot
