#include "unimot/rope.hpp"

#include <cmath>

#include "unimot/error.hpp"

namespace unimot {

void RopeConfig::validate() const {
    require(dims_t % 2 == 0 && dims_h % 2 == 0 && dims_w % 2 == 0, ErrorCode::invalid_argument,
            "rope axis dimensions must be even");
    require(head_size() > 0, ErrorCode::invalid_argument, "rope head size is zero");
    require(theta_t > 0 && theta_h > 0 && theta_w > 0, ErrorCode::invalid_argument, "rope bases must be positive");
}

std::vector<PositionTriple> assign_positions(const SegmentLayout& layout) {
    layout.validate();
    std::vector<PositionTriple> pos;
    pos.reserve(layout.total());
    std::int64_t t = 0;
    bool reuse_t = false;  // previous segment was a paired noise block
    std::int64_t shared_t = 0;
    for (const auto& seg : layout.segments) {
        if (seg.kind == TokenType::text) {
            for (std::size_t i = 0; i < seg.length; ++i) pos.push_back({t++, 0, 0});
            reuse_t = false;
            continue;
        }
        const std::int64_t step = reuse_t ? shared_t : t++;
        for (std::size_t r = 0; r < seg.rows; ++r) {
            for (std::size_t c = 0; c < seg.cols; ++c) {
                pos.push_back({step, static_cast<std::int64_t>(r), static_cast<std::int64_t>(c)});
            }
        }
        reuse_t = seg.kind == TokenType::noise_image && seg.paired;
        shared_t = step;
    }
    return pos;
}

namespace {

void rotate_slice(double* v, std::size_t dims, std::int64_t p, double theta, bool inverse) {
    if (p == 0) return;
    for (std::size_t i = 0; i < dims / 2; ++i) {
        const double freq = std::pow(theta, -static_cast<double>(2 * i) / static_cast<double>(dims));
        const double angle = static_cast<double>(p) * freq;
        const double c = std::cos(angle);
        const double s = inverse ? -std::sin(angle) : std::sin(angle);
        const double a = v[2 * i], b = v[2 * i + 1];
        v[2 * i] = a * c - b * s;
        v[2 * i + 1] = a * s + b * c;
    }
}

}  // namespace

void apply_rope_inplace(std::span<double> vec, const PositionTriple& pos, const RopeConfig& cfg, bool inverse) {
    require(vec.size() == cfg.head_size(), ErrorCode::shape_mismatch,
            "apply_rope: vector of " + std::to_string(vec.size()) + " for head size " +
                std::to_string(cfg.head_size()));
    double* v = vec.data();
    rotate_slice(v, cfg.dims_t, pos.t, cfg.theta_t, inverse);
    rotate_slice(v + cfg.dims_t, cfg.dims_h, pos.h, cfg.theta_h, inverse);
    rotate_slice(v + cfg.dims_t + cfg.dims_h, cfg.dims_w, pos.w, cfg.theta_w, inverse);
}

std::vector<double> apply_rope(std::span<const double> vec, const PositionTriple& pos, const RopeConfig& cfg) {
    std::vector<double> out(vec.begin(), vec.end());
    apply_rope_inplace(out, pos, cfg);
    return out;
}

ad::Var rope(ad::Tape& tape, ad::Var x, std::span<const PositionTriple> positions, const RopeConfig& cfg,
             std::size_t heads) {
    const Tensor& xv = tape.value(x);
    const std::size_t hs = cfg.head_size();
    require(xv.rank() == 2 && xv.cols() == heads * hs && xv.rows() == positions.size(), ErrorCode::shape_mismatch,
            "rope: input " + shape_str(xv.shape()) + " vs " + std::to_string(positions.size()) + " positions of " +
                std::to_string(heads) + " heads");
    Tensor out = xv;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t h = 0; h < heads; ++h) {
            apply_rope_inplace(out.row(r).subspan(h * hs, hs), positions[r], cfg);
        }
    }
    std::vector<PositionTriple> pos(positions.begin(), positions.end());
    return tape.record(std::move(out), tape.requires_grad(x),
                       [x, pos = std::move(pos), cfg, heads](ad::Tape& tp, const Tensor& g) {
                           // Rotations are orthogonal: the adjoint is the inverse rotation.
                           Tensor back = g;
                           const std::size_t hs = cfg.head_size();
                           for (std::size_t r = 0; r < back.rows(); ++r) {
                               for (std::size_t h = 0; h < heads; ++h) {
                                   apply_rope_inplace(back.row(r).subspan(h * hs, hs), pos[r], cfg, true);
                               }
                           }
                           Tensor& gx = tp.grad_buffer(x);
                           for (std::size_t i = 0; i < back.size(); ++i) gx[i] += back[i];
                       });
}

}  // namespace unimot
