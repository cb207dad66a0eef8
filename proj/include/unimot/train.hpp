#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "unimot/autograd.hpp"
#include "unimot/checkpoint.hpp"
#include "unimot/config.hpp"
#include "unimot/dataset.hpp"
#include "unimot/mot.hpp"

namespace unimot {

// Global L2 norm over every tensor; scales all of them by max_norm / norm when the
// norm exceeds max_norm. Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> grads, double max_norm);
double global_norm(std::span<const Tensor> grads);

// shadow <- ratio * shadow + (1 - ratio) * params
void ema_update(Tensor& shadow, const Tensor& params, double ratio);
void ema_update(ModelParams& shadow, const ModelParams& params, double ratio);

// Decoupled-weight-decay Adam with bias correction. Moments follow the model's
// parameter traversal order.
class AdamW {
public:
    AdamW(const ModelParams& params, const OptimizerConfig& cfg);
    void step(ModelParams& params, std::span<const Tensor> grads);
    std::uint64_t steps_taken() const noexcept { return t_; }

private:
    OptimizerConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::uint64_t t_ = 0;
};

// Zero-filled gradient buffers in parameter traversal order.
std::vector<Tensor> zero_grads(const ModelParams& params);

// [<bos> caption <eos>] <img> [noise], or <img> [noise] when text is dropped.
struct TrainingExample {
    TokenSequence seq;
    std::vector<std::size_t> target_rows;  // rows of the text logits that carry a target
    std::vector<int> targets;
    Tensor z;
    Tensor v_star;
    double t = 0.0;
};

TrainingExample build_training_example(const Example& ex, ConditionFlags flags, double t, const Tensor& eps,
                                       double sigma_r, double sigma_bar);

struct LossVars {
    ad::Var ce_sum;  // summed next-token NLL, [1]
    ad::Var mse;     // velocity MSE, [1]
    ad::Var weighted;
};

// weighted = ce_weight * ce_sum + mse_weight * mse
LossVars example_loss(ad::Tape& tape, const TrainingExample& ex, const ModelParams& params, double ce_weight,
                      double mse_weight);

// example_loss(params) - example_loss(reference params), accumulated term by term
// against the reference forward pass so the difference keeps precision far below
// one ulp of the loss. Same gradient as example_loss; used for finite differences.
double example_loss_shift(const TrainingExample& ex, const ModelParams& params, const ModelOutput& reference,
                          double ce_weight, double mse_weight);

struct StepMetrics {
    std::uint64_t step = 0;
    double ce = 0.0;
    double mse = 0.0;
    double total = 0.0;
    double grad_norm = 0.0;
};

// {"step":..,"ce":..,"mse":..,"total":..,"grad_norm":..}
std::string format_metrics(const StepMetrics& m);
StepMetrics parse_metrics(const std::string& line);

using StepCallback = std::function<void(const StepMetrics&)>;

// Worker threads for per-sample gradients; UNIMOT_THREADS, default 1.
std::size_t thread_count_from_env();

Checkpoint initial_checkpoint(const TrainConfig& cfg);
Checkpoint train(const TrainConfig& cfg, std::span<const Example> data, const StepCallback& on_step = {},
                 std::size_t threads = 1);

}  // namespace unimot
