#include "unimot/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "unimot/error.hpp"

namespace unimot {

std::vector<std::size_t> MaskSpec::allowed(std::size_t q) const {
    std::vector<std::size_t> cols;
    for (std::size_t k = 0; k < n_; ++k) {
        if (allow_[q * n_ + k]) cols.push_back(k);
    }
    return cols;
}

const char* to_string(BlockClass c) noexcept {
    return c == BlockClass::causal_fast_path ? "causal" : "extended";
}

MaskSpec build_mask(const SegmentLayout& layout) {
    layout.validate();
    const std::size_t n = layout.total();
    const auto types = layout.token_types();
    const auto offsets = layout.offsets();
    MaskSpec mask(n);
    for (std::size_t s = 0; s < layout.segments.size(); ++s) {
        const auto& seg = layout.segments[s];
        const std::size_t begin = offsets[s];
        const std::size_t end = begin + seg.size();
        for (std::size_t q = begin; q < end; ++q) {
            const std::size_t prefix_end = seg.kind == TokenType::text ? q + 1 : begin;
            for (std::size_t k = 0; k < prefix_end; ++k) {
                if (types[k] != TokenType::noise_image) mask.set(q, k, true);
            }
            if (seg.is_image()) {
                for (std::size_t k = begin; k < end; ++k) mask.set(q, k, true);
            }
        }
    }
    return mask;
}

BlockPlan build_block_plan(const SegmentLayout& layout, std::size_t block_size) {
    layout.validate();
    require(!layout.has_noise(), ErrorCode::invalid_argument,
            "block plan covers clean prefill only; layout " + format_layout(layout) + " has a noise segment");
    require(block_size > 0, ErrorCode::invalid_argument, "block size must be positive");
    BlockPlan plan;
    plan.block_size = block_size;
    plan.tokens = layout.total();
    const auto types = layout.token_types();
    for (std::size_t i = 0; i < types.size(); ++i) {
        if (types[i] != TokenType::text) plan.image_token_end = i + 1;
    }
    for (std::size_t b = 0; b < plan.tokens; b += block_size) {
        MBlock mb;
        mb.row_begin = b;
        mb.row_end = std::min(b + block_size, plan.tokens);
        const bool has_image = std::any_of(types.begin() + static_cast<std::ptrdiff_t>(mb.row_begin),
                                           types.begin() + static_cast<std::ptrdiff_t>(mb.row_end),
                                           [](TokenType t) { return t != TokenType::text; });
        mb.cls = has_image ? BlockClass::image_extended : BlockClass::causal_fast_path;
        mb.key_end = has_image ? std::max(plan.image_token_end, mb.row_end) : mb.row_end;
        plan.blocks.push_back(mb);
    }
    return plan;
}

std::vector<std::size_t> row_cutoffs(const SegmentLayout& layout) {
    require(!layout.has_noise(), ErrorCode::invalid_argument, "row cutoffs are defined for clean layouts only");
    std::vector<std::size_t> cut;
    const auto offsets = layout.offsets();
    for (std::size_t s = 0; s < layout.segments.size(); ++s) {
        const auto& seg = layout.segments[s];
        for (std::size_t i = 0; i < seg.size(); ++i) {
            cut.push_back(seg.kind == TokenType::text ? offsets[s] + i + 1 : offsets[s] + seg.size());
        }
    }
    return cut;
}

namespace {

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n) {
    require(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, ErrorCode::shape_mismatch, "attention expects matrices");
    require(q.rows() == n && k.rows() == n && v.rows() == n && q.cols() == k.cols(), ErrorCode::shape_mismatch,
            "attention: Q " + shape_str(q.shape()) + ", K " + shape_str(k.shape()) + ", V " + shape_str(v.shape()) +
                " for " + std::to_string(n) + " tokens");
}

}  // namespace

Tensor attend_reference(const Tensor& q, const Tensor& k, const Tensor& v, const MaskSpec& mask, double scale) {
    const std::size_t n = mask.size();
    check_qkv(q, k, v, n);
    const std::size_t d = q.cols(), dv = v.cols();
    Tensor out({n, dv});
    std::vector<double> logits(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::size_t j = 0; j < n; ++j) {
            if (!mask(i, j)) {
                logits[j] = -std::numeric_limits<double>::infinity();
                continue;
            }
            double s = 0.0;
            for (std::size_t p = 0; p < d; ++p) s += q.at(i, p) * k.at(j, p);
            logits[j] = s * scale;
            mx = std::max(mx, logits[j]);
            any = true;
        }
        require(any, ErrorCode::invalid_argument, "attention row " + std::to_string(i) + " is fully masked");
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            logits[j] = mask(i, j) ? std::exp(logits[j] - mx) : 0.0;
            z += logits[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            if (logits[j] == 0.0) continue;
            const double w = logits[j] / z;
            for (std::size_t p = 0; p < dv; ++p) out.at(i, p) += w * v.at(j, p);
        }
    }
    return out;
}

BlockedResult attend_blocked(const Tensor& q, const Tensor& k, const Tensor& v, const BlockPlan& plan,
                             const std::vector<std::size_t>& cutoffs, double scale) {
    const std::size_t n = plan.tokens;
    check_qkv(q, k, v, n);
    require(cutoffs.size() == n, ErrorCode::shape_mismatch, "attend_blocked: one cutoff per row required");
    const std::size_t d = q.cols(), dv = v.cols(), bs = plan.block_size;
    const std::size_t key_blocks = (n + bs - 1) / bs;

    BlockedResult res{Tensor({n, dv}), {}};
    std::vector<double> m(bs), l(bs), acc(bs * dv), tile(bs);
    for (const auto& mb : plan.blocks) {
        require(mb.key_end <= n && mb.row_end <= n, ErrorCode::invalid_argument, "attend_blocked: plan exceeds sequence");
        const std::size_t rows = mb.row_end - mb.row_begin;
        std::fill(m.begin(), m.end(), -std::numeric_limits<double>::infinity());
        std::fill(l.begin(), l.end(), 0.0);
        std::fill(acc.begin(), acc.end(), 0.0);
        const std::size_t visit = (mb.key_end + bs - 1) / bs;
        res.stats.key_blocks_visited += visit;
        res.stats.key_blocks_skipped += key_blocks - visit;
        for (std::size_t kb = 0; kb < visit; ++kb) {
            const std::size_t k0 = kb * bs;
            const std::size_t k1 = std::min(k0 + bs, mb.key_end);
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t i = mb.row_begin + r;
                const std::size_t limit = std::min(k1, cutoffs[i]);
                if (limit <= k0) continue;
                double tile_max = -std::numeric_limits<double>::infinity();
                double* sv = tile.data();
                for (std::size_t j = k0; j < limit; ++j) {
                    double dotv = 0.0;
                    for (std::size_t p = 0; p < d; ++p) dotv += q.at(i, p) * k.at(j, p);
                    sv[j - k0] = dotv * scale;
                    tile_max = std::max(tile_max, sv[j - k0]);
                }
                const double m_new = std::max(m[r], tile_max);
                const double corr = std::exp(m[r] - m_new);
                l[r] *= corr;
                double* a = acc.data() + r * dv;
                for (std::size_t p = 0; p < dv; ++p) a[p] *= corr;
                for (std::size_t j = k0; j < limit; ++j) {
                    const double e = std::exp(sv[j - k0] - m_new);
                    l[r] += e;
                    for (std::size_t p = 0; p < dv; ++p) a[p] += e * v.at(j, p);
                }
                m[r] = m_new;
            }
        }
        for (std::size_t r = 0; r < rows; ++r) {
            require(l[r] > 0.0, ErrorCode::invalid_argument,
                    "attention row " + std::to_string(mb.row_begin + r) + " is fully masked");
            for (std::size_t p = 0; p < dv; ++p) res.out.at(mb.row_begin + r, p) = acc[r * dv + p] / l[r];
        }
    }
    return res;
}

std::size_t causal_skipped_blocks(std::size_t tokens, std::size_t block_size) {
    const std::size_t nb = (tokens + block_size - 1) / block_size;
    std::size_t skipped = 0;
    for (std::size_t b = 0; b < nb; ++b) skipped += nb - (b + 1);
    return skipped;
}

ad::Var masked_attention(ad::Tape& tape, ad::Var q, ad::Var k, ad::Var v, const MaskSpec& mask, std::size_t q_heads,
                         std::size_t kv_heads) {
    const Tensor& qv = tape.value(q);
    const Tensor& kv = tape.value(k);
    const Tensor& vv = tape.value(v);
    const std::size_t n = mask.size();
    require(q_heads > 0 && kv_heads > 0 && q_heads % kv_heads == 0, ErrorCode::invalid_argument,
            "query heads must be a multiple of kv heads");
    require(qv.rows() == n && kv.rows() == n && vv.rows() == n && qv.cols() % q_heads == 0, ErrorCode::shape_mismatch,
            "masked_attention: Q " + shape_str(qv.shape()) + " for " + std::to_string(n) + " tokens");
    const std::size_t d = qv.cols() / q_heads;
    require(kv.cols() == kv_heads * d && vv.cols() == kv_heads * d, ErrorCode::shape_mismatch,
            "masked_attention: K/V width does not match kv heads");
    const std::size_t group = q_heads / kv_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    std::vector<std::vector<std::size_t>> cols(n);
    for (std::size_t i = 0; i < n; ++i) {
        cols[i] = mask.allowed(i);
        require(!cols[i].empty(), ErrorCode::invalid_argument, "attention row " + std::to_string(i) + " is fully masked");
    }
    // probs[h][i] aligned with cols[i]
    std::vector<std::vector<std::vector<double>>> probs(q_heads, std::vector<std::vector<double>>(n));
    Tensor out({n, q_heads * d});
    for (std::size_t h = 0; h < q_heads; ++h) {
        const std::size_t g = h / group;
        for (std::size_t i = 0; i < n; ++i) {
            auto& p = probs[h][i];
            p.resize(cols[i].size());
            const double* qi = qv.data().data() + i * qv.cols() + h * d;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < cols[i].size(); ++c) {
                const double* kj = kv.data().data() + cols[i][c] * kv.cols() + g * d;
                double s = 0.0;
                for (std::size_t e = 0; e < d; ++e) s += qi[e] * kj[e];
                p[c] = s * scale;
                mx = std::max(mx, p[c]);
            }
            double z = 0.0;
            for (double& x : p) {
                x = std::exp(x - mx);
                z += x;
            }
            double* o = out.data().data() + i * out.cols() + h * d;
            for (std::size_t c = 0; c < cols[i].size(); ++c) {
                p[c] /= z;
                const double* vj = vv.data().data() + cols[i][c] * vv.cols() + g * d;
                for (std::size_t e = 0; e < d; ++e) o[e] += p[c] * vj[e];
            }
        }
    }
    const bool needs = tape.requires_grad(q) || tape.requires_grad(k) || tape.requires_grad(v);
    return tape.record(
        std::move(out), needs,
        [q, k, v, q_heads, group, d, scale, cols = std::move(cols), probs = std::move(probs)](ad::Tape& tp,
                                                                                             const Tensor& go) {
            const Tensor& qv = tp.value(q);
            const Tensor& kv = tp.value(k);
            const Tensor& vv = tp.value(v);
            Tensor* gq = tp.requires_grad(q) ? &tp.grad_buffer(q) : nullptr;
            Tensor* gk = tp.requires_grad(k) ? &tp.grad_buffer(k) : nullptr;
            Tensor* gv = tp.requires_grad(v) ? &tp.grad_buffer(v) : nullptr;
            const std::size_t n = cols.size();
            std::vector<double> dp;
            for (std::size_t h = 0; h < q_heads; ++h) {
                const std::size_t g = h / group;
                for (std::size_t i = 0; i < n; ++i) {
                    const auto& p = probs[h][i];
                    const auto& ci = cols[i];
                    const double* goi = go.data().data() + i * go.cols() + h * d;
                    dp.assign(ci.size(), 0.0);
                    double mean = 0.0;
                    for (std::size_t c = 0; c < ci.size(); ++c) {
                        const double* vj = vv.data().data() + ci[c] * vv.cols() + g * d;
                        double s = 0.0;
                        for (std::size_t e = 0; e < d; ++e) s += goi[e] * vj[e];
                        dp[c] = s;
                        mean += p[c] * s;
                        if (gv) {
                            double* gvj = gv->data().data() + ci[c] * vv.cols() + g * d;
                            for (std::size_t e = 0; e < d; ++e) gvj[e] += p[c] * goi[e];
                        }
                    }
                    const double* qi = qv.data().data() + i * qv.cols() + h * d;
                    double* gqi = gq ? gq->data().data() + i * qv.cols() + h * d : nullptr;
                    for (std::size_t c = 0; c < ci.size(); ++c) {
                        const double ds = p[c] * (dp[c] - mean) * scale;
                        if (ds == 0.0) continue;
                        const double* kj = kv.data().data() + ci[c] * kv.cols() + g * d;
                        if (gqi) {
                            for (std::size_t e = 0; e < d; ++e) gqi[e] += ds * kj[e];
                        }
                        if (gk) {
                            double* gkj = gk->data().data() + ci[c] * kv.cols() + g * d;
                            for (std::size_t e = 0; e < d; ++e) gkj[e] += ds * qi[e];
                        }
                    }
                }
            }
        });
}

}  // namespace unimot
