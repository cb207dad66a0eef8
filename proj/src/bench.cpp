#include "unimot/bench.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "unimot/attention.hpp"
#include "unimot/error.hpp"
#include "unimot/flow.hpp"
#include "unimot/layout.hpp"
#include "unimot/ops.hpp"
#include "unimot/random.hpp"

namespace unimot {

namespace {

std::string printf_str(const char* fmt, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, fmt, args...);
    return buf;
}

template <class F>
double time_ms(std::size_t repeats, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < repeats; ++i) f();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / static_cast<double>(repeats);
}

}  // namespace

std::vector<std::string> run_bench(std::string_view layout_spec, const BenchOptions& opts) {
    require(opts.block_size > 0 && opts.repeats > 0 && opts.head_dim > 0, ErrorCode::invalid_argument,
            "bench: block size, repeats and head dim must be positive");
    const SegmentLayout layout = parse_layout(layout_spec);
    const std::size_t n = layout.total();
    const MaskSpec mask = build_mask(layout);
    std::size_t allowed = 0;
    for (std::size_t q = 0; q < n; ++q) {
        for (std::size_t k = 0; k < n; ++k) allowed += mask(q, k);
    }

    std::vector<std::string> out;
    out.push_back("layout " + format_layout(layout) + " tokens " + std::to_string(n));
    out.push_back(printf_str("mask allowed %zu of %zu (%.3f)", allowed, n * n,
                             static_cast<double>(allowed) / static_cast<double>(n * n)));

    RandomStream rng(opts.seed);
    const Tensor q = standard_normal({n, opts.head_dim}, rng);
    const Tensor k = standard_normal({n, opts.head_dim}, rng);
    const Tensor v = standard_normal({n, opts.head_dim}, rng);
    const double scale = 1.0 / std::sqrt(static_cast<double>(opts.head_dim));
    Tensor ref;
    const double ref_ms = time_ms(opts.repeats, [&] { ref = attend_reference(q, k, v, mask, scale); });

    if (layout.has_noise()) {
        out.push_back("plan none (noise segments; the block plan covers clean prefill)");
        out.push_back(printf_str("time reference %.4f ms", ref_ms));
        return out;
    }

    const BlockPlan plan = build_block_plan(layout, opts.block_size);
    out.push_back("plan block_size " + std::to_string(plan.block_size) + " blocks " +
                  std::to_string(plan.blocks.size()) + " image_token_end " + std::to_string(plan.image_token_end));
    std::size_t causal = 0;
    for (std::size_t i = 0; i < plan.blocks.size(); ++i) {
        const auto& b = plan.blocks[i];
        causal += b.cls == BlockClass::causal_fast_path;
        out.push_back(printf_str("block %zu rows %zu-%zu keys 0-%zu %s", i, b.row_begin, b.row_end - 1, b.key_end - 1,
                                 to_string(b.cls)));
    }
    const auto cutoffs = row_cutoffs(layout);
    BlockedResult blocked;
    const double blk_ms = time_ms(opts.repeats, [&] { blocked = attend_blocked(q, k, v, plan, cutoffs, scale); });
    out.push_back(printf_str("classes causal %zu extended %zu", causal, plan.blocks.size() - causal));
    out.push_back(printf_str("key_blocks visited %zu skipped %zu dense_causal_skipped %zu",
                             blocked.stats.key_blocks_visited, blocked.stats.key_blocks_skipped,
                             causal_skipped_blocks(n, opts.block_size)));
    out.push_back(printf_str("time reference %.4f ms blocked %.4f ms", ref_ms, blk_ms));
    out.push_back(printf_str("max_abs_diff %.3e", max_abs_diff(blocked.out, ref)));
    return out;
}

}  // namespace unimot
