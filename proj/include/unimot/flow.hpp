#pragma once

#include <cstddef>
#include <span>

#include "unimot/random.hpp"
#include "unimot/tensor.hpp"

namespace unimot {

// sigma_R(H, W) = sigma0 * sqrt(N / N0), N = H W / 32^2. sigma_max normalizes the
// conditioning input sigma_bar = sigma_R / sigma_max.
struct NoiseScaleConfig {
    double sigma0 = 1.0;
    double n0 = 64.0;
    double sigma_max = 8.0;

    void validate() const;
    // sigma_max taken as the scale at the largest configured resolution.
    static NoiseScaleConfig for_max_resolution(double sigma0, double n0, std::size_t max_height, std::size_t max_width);
};

double noise_scale(std::size_t height, std::size_t width, const NoiseScaleConfig& cfg);
double normalized_noise_scale(double sigma_r, const NoiseScaleConfig& cfg);

double logistic(double x) noexcept;
// logistic(mu + sigma n), n ~ N(0, 1); strictly inside (0, 1).
double sample_t(RandomStream& rng, double mu, double sigma);

// Guard on the 1 - t denominator of the velocity conversions.
inline constexpr double kTimeClamp = 1e-4;

// z_t = t x + (1 - t) sigma_R eps
Tensor interpolate(const Tensor& x, const Tensor& eps, double t, double sigma_r);
// v* = (x - z_t) / (1 - t)
Tensor target_velocity(const Tensor& x, const Tensor& z, double t);
// v_theta = (x_hat - z_t) / (1 - t)
Tensor xpred_to_velocity(const Tensor& x_hat, const Tensor& z, double t);
void check_velocity_time(double t);

double gen_loss(const Tensor& v_theta, const Tensor& v_star);
// Mean next-token negative log-likelihood; logits [N, V], one target per row.
double text_loss(const Tensor& logits, std::span<const int> targets);

struct LossWeights {
    double und = 0.1;  // lambda_1, cross-entropy
    double gen = 1.0;  // lambda_2, velocity MSE
    void validate() const;
};

double total_loss(double und, double gen, const LossWeights& w);

struct ConditionFlags {
    bool text_present = true;
    bool image_context_present = true;

    friend bool operator==(const ConditionFlags&, const ConditionFlags&) = default;
};

// One uniform draw: [0, p_all) drops both, [p_all, p_all + p_text) drops text only.
ConditionFlags drop_conditions(RandomStream& rng, double p_text, double p_all);

struct FlowSample {
    Tensor x;
    Tensor eps;
    double t = 0.0;
    double sigma_r = 1.0;
    Tensor z;
};

Tensor standard_normal(const Shape& shape, RandomStream& rng);
FlowSample draw_flow_sample(const Tensor& x, double sigma_r, double mu, double sigma, RandomStream& rng);

}  // namespace unimot
