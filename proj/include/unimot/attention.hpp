#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "unimot/autograd.hpp"
#include "unimot/layout.hpp"
#include "unimot/tensor.hpp"

namespace unimot {

// n x n allow-matrix, row = query, column = key.
class MaskSpec {
public:
    MaskSpec() = default;
    explicit MaskSpec(std::size_t n) : n_(n), allow_(n * n, 0) {}

    std::size_t size() const noexcept { return n_; }
    bool operator()(std::size_t q, std::size_t k) const noexcept { return allow_[q * n_ + k] != 0; }
    void set(std::size_t q, std::size_t k, bool v) noexcept { allow_[q * n_ + k] = v ? 1 : 0; }
    std::vector<std::size_t> allowed(std::size_t q) const;

    friend bool operator==(const MaskSpec&, const MaskSpec&) = default;

private:
    std::size_t n_ = 0;
    std::vector<std::uint8_t> allow_;
};

// Text rows: causal over non-noise columns. Clean image rows: every earlier
// non-noise column plus their whole block. Noise rows: every non-noise column
// before the block plus their whole block. Clean rows never see noise columns.
MaskSpec build_mask(const SegmentLayout& layout);

enum class BlockClass { causal_fast_path, image_extended };

const char* to_string(BlockClass c) noexcept;

struct MBlock {
    std::size_t row_begin = 0;
    std::size_t row_end = 0;  // exclusive
    std::size_t key_end = 0;  // keys [0, key_end) are fetched
    BlockClass cls = BlockClass::causal_fast_path;
};

struct BlockPlan {
    std::size_t block_size = 4;
    std::size_t tokens = 0;
    std::size_t image_token_end = 0;  // one past the last image token; 0 without images
    std::vector<MBlock> blocks;
};

// Prefill plan for clean layouts. A block holding any image token fetches keys up to
// max(image_token_end, row_end); other blocks keep the causal range. Rejects
// layouts containing noise segments.
BlockPlan build_block_plan(const SegmentLayout& layout, std::size_t block_size = 4);

// For clean layouts every row's allowed set is a prefix [0, cutoff).
std::vector<std::size_t> row_cutoffs(const SegmentLayout& layout);

// Dense masked scaled-dot-product attention over single-head Q, K, V: [n, d].
Tensor attend_reference(const Tensor& q, const Tensor& k, const Tensor& v, const MaskSpec& mask, double scale);

struct BlockedStats {
    std::size_t key_blocks_visited = 0;
    std::size_t key_blocks_skipped = 0;
};

struct BlockedResult {
    Tensor out;
    BlockedStats stats;
};

// Tiled attention driven by the plan: each M-block streams key blocks of the same
// size up to its key_end with an online softmax; rows are cut at `cutoffs`.
BlockedResult attend_blocked(const Tensor& q, const Tensor& k, const Tensor& v, const BlockPlan& plan,
                             const std::vector<std::size_t>& cutoffs, double scale);

// Key blocks a plain causal tiling over n tokens skips.
std::size_t causal_skipped_blocks(std::size_t tokens, std::size_t block_size);

// Multi-head masked attention on the tape. q: [n, q_heads*d], k/v: [n, kv_heads*d];
// query head h reads kv head h / (q_heads / kv_heads).
ad::Var masked_attention(ad::Tape& tape, ad::Var q, ad::Var k, ad::Var v, const MaskSpec& mask, std::size_t q_heads,
                         std::size_t kv_heads);

}  // namespace unimot
