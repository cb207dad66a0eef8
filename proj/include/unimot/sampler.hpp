#pragma once

#include <cstddef>
#include <variant>
#include <vector>

#include "unimot/flow.hpp"
#include "unimot/mot.hpp"
#include "unimot/random.hpp"
#include "unimot/tensor.hpp"

namespace unimot {

struct SamplerConfig {
    std::size_t steps = 32;
    double shift = 3.0;
    double gamma = 4.0;      // text guidance
    double gamma_img = 1.0;  // image-context guidance
    bool renorm = true;

    void validate() const;
};

// u_k = k / steps warped by t = u / (shift - (shift - 1) u); endpoints exactly 0 and 1.
std::vector<double> shifted_schedule(std::size_t steps, double shift);

// z_0 = sigma_R(H, W) * eps
Tensor init_noise(std::size_t height, std::size_t width, RandomStream& rng, const NoiseScaleConfig& cfg);

struct GuidanceTriple {
    Tensor full;  // text + image context
    Tensor img;   // image context only
    Tensor unc;   // unconditional
};

// gamma (full - img) + gamma_img (img - unc) + unc. Returns `full` unchanged when
// both scales are 1.
Tensor guide(const GuidanceTriple& g, double gamma, double gamma_img);

struct RenormResult {
    Tensor velocity;
    bool degenerate = false;  // guided norm was zero; returned unchanged
};

// Rescales `guided` to the global L2 norm of `reference`.
RenormResult cfg_renorm(const Tensor& guided, const Tensor& reference);

// z + (t_next - t) v
Tensor euler_step(const Tensor& z, const Tensor& v, double t, double t_next);

using ContextItem = std::variant<TextItem, CleanImageItem>;

// Conditioning available to a generation request, in sequence order.
struct GenerationContext {
    std::vector<ContextItem> items;
};

// [context...] <img> [noise]. Clean context images are wrapped in <img> ... </img>.
// Dropping text removes text items; dropping image context removes image content
// but keeps its markers.
TokenSequence build_generation_sequence(const GenerationContext& ctx, ConditionFlags flags, const Tensor& z, double t,
                                        double sigma_bar);

// Clean-image predictor queried once per guidance branch per step.
class XPredictor {
public:
    virtual ~XPredictor() = default;
    virtual Tensor predict(const GenerationContext& ctx, ConditionFlags flags, const Tensor& z, double t,
                           double sigma_bar) const = 0;
};

class ModelPredictor final : public XPredictor {
public:
    explicit ModelPredictor(const ModelParams& params) : params_(params) {}
    Tensor predict(const GenerationContext& ctx, ConditionFlags flags, const Tensor& z, double t,
                   double sigma_bar) const override;

private:
    const ModelParams& params_;
};

struct SampleResult {
    Tensor image;  // clamped to [-1, 1]
    std::size_t degenerate_renorms = 0;
    std::size_t forward_passes = 0;
};

SampleResult sample(const XPredictor& model, const GenerationContext& ctx, std::size_t height, std::size_t width,
                    const SamplerConfig& cfg, const NoiseScaleConfig& noise, RandomStream rng);

}  // namespace unimot
