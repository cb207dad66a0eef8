#include "unimot/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "unimot/error.hpp"
#include "unimot/ops.hpp"
#include "unimot/patch_codec.hpp"

namespace unimot {

void SamplerConfig::validate() const {
    require(steps >= 1, ErrorCode::invalid_argument, "sampler needs at least one step");
    require(shift >= 1.0, ErrorCode::invalid_argument, "timestep shift must be >= 1");
    require(std::isfinite(gamma) && std::isfinite(gamma_img), ErrorCode::invalid_argument,
            "guidance scales must be finite");
}

std::vector<double> shifted_schedule(std::size_t steps, double shift) {
    require(steps >= 1, ErrorCode::invalid_argument, "schedule needs at least one step");
    require(shift >= 1.0, ErrorCode::invalid_argument, "timestep shift must be >= 1");
    std::vector<double> t(steps + 1);
    for (std::size_t k = 0; k <= steps; ++k) {
        const double u = static_cast<double>(k) / static_cast<double>(steps);
        t[k] = u / (shift - (shift - 1.0) * u);
    }
    t.front() = 0.0;
    t.back() = 1.0;
    return t;
}

Tensor init_noise(std::size_t height, std::size_t width, RandomStream& rng, const NoiseScaleConfig& cfg) {
    const double sigma_r = noise_scale(height, width, cfg);
    Tensor z = standard_normal({kChannels, height, width}, rng);
    for (double& v : z.data()) v *= sigma_r;
    return z;
}

Tensor guide(const GuidanceTriple& g, double gamma, double gamma_img) {
    require(g.full.shape() == g.img.shape() && g.img.shape() == g.unc.shape(), ErrorCode::shape_mismatch,
            "guide: velocity fields differ in shape");
    if (gamma == 1.0 && gamma_img == 1.0) return g.full;
    Tensor out(g.full.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = gamma * (g.full[i] - g.img[i]) + gamma_img * (g.img[i] - g.unc[i]) + g.unc[i];
    }
    return out;
}

RenormResult cfg_renorm(const Tensor& guided, const Tensor& reference) {
    require(guided.shape() == reference.shape(), ErrorCode::shape_mismatch, "cfg_renorm: shape mismatch");
    const double gn = l2_norm(guided.data());
    if (gn == 0.0) return {guided, true};
    return {scale(guided, l2_norm(reference.data()) / gn), false};
}

Tensor euler_step(const Tensor& z, const Tensor& v, double t, double t_next) {
    require(z.shape() == v.shape(), ErrorCode::shape_mismatch, "euler_step: shape mismatch");
    require(t_next > t, ErrorCode::invalid_argument, "euler_step: times must increase");
    const double dt = t_next - t;
    Tensor out = z;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += dt * v[i];
    return out;
}

TokenSequence build_generation_sequence(const GenerationContext& ctx, ConditionFlags flags, const Tensor& z, double t,
                                        double sigma_bar) {
    TokenSequence seq;
    for (const auto& item : ctx.items) {
        if (const auto* text = std::get_if<TextItem>(&item)) {
            if (flags.text_present && !text->ids.empty()) seq.items.emplace_back(*text);
        } else {
            seq.items.emplace_back(MarkerItem{Marker::image_open});
            if (flags.image_context_present) seq.items.emplace_back(std::get<CleanImageItem>(item));
            seq.items.emplace_back(MarkerItem{Marker::image_close});
        }
    }
    seq.items.emplace_back(MarkerItem{Marker::image_open});
    seq.items.emplace_back(NoiseImageItem{z, t, sigma_bar, false});
    return seq;
}

Tensor ModelPredictor::predict(const GenerationContext& ctx, ConditionFlags flags, const Tensor& z, double t,
                               double sigma_bar) const {
    auto out = model_forward(build_generation_sequence(ctx, flags, z, t, sigma_bar), params_);
    return std::move(out.x_hat.back());
}

SampleResult sample(const XPredictor& model, const GenerationContext& ctx, std::size_t height, std::size_t width,
                    const SamplerConfig& cfg, const NoiseScaleConfig& noise, RandomStream rng) {
    cfg.validate();
    const double sigma_bar = normalized_noise_scale(noise_scale(height, width, noise), noise);
    const auto times = shifted_schedule(cfg.steps, cfg.shift);
    const bool unguided = cfg.gamma == 1.0 && cfg.gamma_img == 1.0;
    const bool has_image_context =
        std::any_of(ctx.items.begin(), ctx.items.end(), [](const auto& i) { return std::holds_alternative<CleanImageItem>(i); });

    SampleResult res;
    Tensor z = init_noise(height, width, rng, noise);
    for (std::size_t k = 0; k < cfg.steps; ++k) {
        const double t = times[k], t_next = times[k + 1];
        GuidanceTriple g;
        Tensor x_full = model.predict(ctx, {true, true}, z, t, sigma_bar);
        ++res.forward_passes;
        if (unguided && t_next == 1.0) {
            // z + (1 - t) (x_hat - z) / (1 - t) is x_hat; take it without the round trip.
            z = std::move(x_full);
            break;
        }
        g.full = xpred_to_velocity(x_full, z, t);
        Tensor v;
        if (unguided) {
            v = g.full;
        } else {
            g.img = xpred_to_velocity(model.predict(ctx, {false, true}, z, t, sigma_bar), z, t);
            ++res.forward_passes;
            if (has_image_context) {
                g.unc = xpred_to_velocity(model.predict(ctx, {false, false}, z, t, sigma_bar), z, t);
                ++res.forward_passes;
            } else {
                // Without image context the two reduced branches build the same sequence.
                g.unc = g.img;
            }
            v = guide(g, cfg.gamma, cfg.gamma_img);
            if (cfg.renorm) {
                auto r = cfg_renorm(v, g.full);
                v = std::move(r.velocity);
                res.degenerate_renorms += r.degenerate ? 1 : 0;
            }
        }
        z = euler_step(z, v, t, t_next);
    }
    for (double& p : z.data()) p = std::clamp(p, -1.0, 1.0);
    res.image = std::move(z);
    return res;
}

}  // namespace unimot
