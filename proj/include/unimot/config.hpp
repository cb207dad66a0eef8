#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "unimot/dataset.hpp"
#include "unimot/flow.hpp"
#include "unimot/mot.hpp"

namespace unimot {

struct OptimizerConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

struct TrainConfig {
    ModelConfig model;
    SyntheticSpec data;
    OptimizerConfig optimizer;
    std::uint64_t seed = 1234;
    std::size_t steps = 2000;
    std::size_t batch_size = 4;
    double grad_clip = 1.0;
    double ema_ratio = 0.999;
    LossWeights loss;
    double drop_text = 0.10;
    double drop_all = 0.10;
    double t_mu = -0.8;
    double t_sigma = 0.8;
    double sigma0 = 1.0;
    double n0 = 4.0;  // token count of a 64x64 image
    std::size_t max_height = 256;
    std::size_t max_width = 256;

    NoiseScaleConfig noise() const;
    void validate() const;
};

// One documented key of the text config format.
struct ConfigKey {
    std::string_view name;
    std::string_view meaning;
};

const std::vector<ConfigKey>& config_schema();

// `key = value` lines; '#' starts a comment; unknown keys are rejected.
TrainConfig parse_config(std::string_view text);
TrainConfig load_config(const std::filesystem::path& path);
// Every key, in schema order; parse_config(format_config(c)) == c.
std::string format_config(const TrainConfig& cfg);

}  // namespace unimot
