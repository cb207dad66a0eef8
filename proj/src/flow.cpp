#include "unimot/flow.hpp"

#include <algorithm>
#include <cmath>

#include "unimot/error.hpp"
#include "unimot/ops.hpp"
#include "unimot/patch_codec.hpp"

namespace unimot {

void NoiseScaleConfig::validate() const {
    require(sigma0 > 0.0 && n0 >= 1.0 && sigma_max >= sigma0, ErrorCode::invalid_argument,
            "noise scale config needs sigma0 > 0, N0 >= 1, sigma_max >= sigma0");
}

NoiseScaleConfig NoiseScaleConfig::for_max_resolution(double sigma0, double n0, std::size_t max_height,
                                                      std::size_t max_width) {
    NoiseScaleConfig cfg{sigma0, n0, sigma0};
    cfg.sigma_max = std::max(sigma0, noise_scale(max_height, max_width, cfg));
    cfg.validate();
    return cfg;
}

double noise_scale(std::size_t height, std::size_t width, const NoiseScaleConfig& cfg) {
    check_image_dims(height, width);
    require(cfg.sigma0 > 0.0 && cfg.n0 >= 1.0, ErrorCode::invalid_argument, "noise scale needs sigma0 > 0 and N0 >= 1");
    const double tokens = static_cast<double>(token_count(height, width));
    return cfg.sigma0 * std::sqrt(tokens / cfg.n0);
}

double normalized_noise_scale(double sigma_r, const NoiseScaleConfig& cfg) {
    const double v = sigma_r / cfg.sigma_max;
    require(v >= 0.0 && v <= 1.0, ErrorCode::invalid_argument,
            "noise scale " + std::to_string(sigma_r) + " exceeds sigma_max " + std::to_string(cfg.sigma_max));
    return v;
}

double logistic(double x) noexcept {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double sample_t(RandomStream& rng, double mu, double sigma) {
    require(sigma > 0.0, ErrorCode::invalid_argument, "t-sampler sigma must be positive");
    const double t = logistic(mu + sigma * rng.normal());
    // Keep the draw strictly inside (0, 1) even when the logistic saturates.
    return std::clamp(t, 0x1.0p-53, 1.0 - 0x1.0p-53);
}

namespace {

void check_same(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape() == b.shape(), ErrorCode::shape_mismatch,
            std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor interpolate(const Tensor& x, const Tensor& eps, double t, double sigma_r) {
    check_same(x, eps, "interpolate");
    require(t >= 0.0 && t <= 1.0, ErrorCode::invalid_argument, "interpolate: t outside [0, 1]");
    Tensor z(x.shape());
    if (t == 1.0) return x;
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = t * x[i] + (1.0 - t) * sigma_r * eps[i];
    return z;
}

void check_velocity_time(double t) {
    require(t >= 0.0 && t <= 1.0 - kTimeClamp, ErrorCode::invalid_argument,
            "velocity conversion at t = " + std::to_string(t) + " is within the clamp of 1");
}

Tensor target_velocity(const Tensor& x, const Tensor& z, double t) {
    check_same(x, z, "target_velocity");
    check_velocity_time(t);
    Tensor v(x.shape());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (x[i] - z[i]) / (1.0 - t);
    return v;
}

Tensor xpred_to_velocity(const Tensor& x_hat, const Tensor& z, double t) {
    return target_velocity(x_hat, z, t);
}

double gen_loss(const Tensor& v_theta, const Tensor& v_star) {
    check_same(v_theta, v_star, "gen_loss");
    if (v_theta.empty()) return 0.0;
    CompensatedSum s;
    for (std::size_t i = 0; i < v_theta.size(); ++i) {
        const double d = v_theta[i] - v_star[i];
        s.add(d * d);
    }
    return s.value() / static_cast<double>(v_theta.size());
}

double text_loss(const Tensor& logits, std::span<const int> targets) {
    require(logits.rows() == targets.size(), ErrorCode::shape_mismatch, "text_loss: one target per row required");
    if (targets.empty()) return 0.0;
    const std::size_t v = logits.cols();
    double total = 0.0;
    for (std::size_t r = 0; r < targets.size(); ++r) {
        require(targets[r] >= 0 && static_cast<std::size_t>(targets[r]) < v, ErrorCode::invalid_argument,
                "text_loss: target " + std::to_string(targets[r]) + " outside vocab of " + std::to_string(v));
        auto row = logits.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (double z : row) s += std::exp(z - mx);
        total += std::log(s) - (row[static_cast<std::size_t>(targets[r])] - mx);
    }
    return total / static_cast<double>(targets.size());
}

void LossWeights::validate() const {
    require(und >= 0.0 && gen >= 0.0 && (und > 0.0 || gen > 0.0), ErrorCode::invalid_argument,
            "loss weights must be nonnegative and not both zero");
}

double total_loss(double und, double gen, const LossWeights& w) {
    w.validate();
    return w.und * und + w.gen * gen;
}

ConditionFlags drop_conditions(RandomStream& rng, double p_text, double p_all) {
    require(p_text >= 0.0 && p_all >= 0.0 && p_text + p_all <= 1.0, ErrorCode::invalid_argument,
            "condition dropout probabilities must be nonnegative with sum <= 1");
    const double u = rng.uniform();
    if (u < p_all) return {false, false};
    if (u < p_all + p_text) return {false, true};
    return {true, true};
}

Tensor standard_normal(const Shape& shape, RandomStream& rng) {
    Tensor t(shape);
    for (double& v : t.data()) v = rng.normal();
    return t;
}

FlowSample draw_flow_sample(const Tensor& x, double sigma_r, double mu, double sigma, RandomStream& rng) {
    FlowSample s;
    s.x = x;
    s.t = sample_t(rng, mu, sigma);
    s.eps = standard_normal(x.shape(), rng);
    s.sigma_r = sigma_r;
    s.z = interpolate(s.x, s.eps, s.t, s.sigma_r);
    return s;
}

}  // namespace unimot
