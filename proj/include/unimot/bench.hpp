#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace unimot {

struct BenchOptions {
    std::size_t block_size = 4;
    std::size_t repeats = 50;
    std::size_t head_dim = 16;
    std::uint64_t seed = 1;
};

// Line-oriented report for one layout: the M-block plan with classes, key blocks
// visited and skipped against a dense-causal tiling, wall times of the dense
// reference and the blocked kernel, and their largest output difference.
// Layouts holding noise segments report the mask only (the plan covers prefill).
std::vector<std::string> run_bench(std::string_view layout_spec, const BenchOptions& opts = {});

}  // namespace unimot
