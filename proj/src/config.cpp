#include "unimot/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iterator>
#include <limits>
#include <map>
#include <sstream>

#include "unimot/error.hpp"

namespace unimot {

NoiseScaleConfig TrainConfig::noise() const {
    return NoiseScaleConfig::for_max_resolution(sigma0, n0, max_height, max_width);
}

void TrainConfig::validate() const {
    model.validate();
    require(model.vocab >= Vocabulary::size(), ErrorCode::invalid_argument,
            "model.vocab must cover the " + std::to_string(Vocabulary::size()) + " caption words");
    check_image_dims(data.height, data.width);
    require(data.count > 0 && steps < (std::size_t{1} << 40) && batch_size > 0, ErrorCode::invalid_argument,
            "data.count and train.batch_size must be positive");
    require(optimizer.lr > 0 && optimizer.eps > 0 && optimizer.beta1 >= 0 && optimizer.beta1 < 1 &&
                optimizer.beta2 >= 0 && optimizer.beta2 < 1 && optimizer.weight_decay >= 0,
            ErrorCode::invalid_argument, "optimizer settings out of range");
    require(grad_clip > 0, ErrorCode::invalid_argument, "train.grad_clip must be positive");
    require(ema_ratio >= 0 && ema_ratio < 1, ErrorCode::invalid_argument, "train.ema_ratio must be in [0, 1)");
    loss.validate();
    require(drop_text >= 0 && drop_all >= 0 && drop_text + drop_all <= 1, ErrorCode::invalid_argument,
            "cfg dropout probabilities out of range");
    require(t_sigma > 0, ErrorCode::invalid_argument, "t_sampler.sigma must be positive");
    check_image_dims(max_height, max_width);
    require(max_height * max_width >= data.height * data.width, ErrorCode::invalid_argument,
            "noise_scale.max resolution is below the training resolution");
    noise();
}

namespace {

struct Binding {
    ConfigKey key;
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, std::string_view)> set;
};

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
    return os.str();
}

template <class T>
T parse_number(std::string_view key, std::string_view s) {
    T v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc() && ptr == s.data() + s.size(), ErrorCode::format,
            "config key '" + std::string(key) + "': cannot parse '" + std::string(s) + "'");
    return v;
}

template <class T>
Binding number(std::string_view name, std::string_view meaning, T TrainConfig::*field) {
    return {{name, meaning},
            [field](const TrainConfig& c) {
                if constexpr (std::is_floating_point_v<T>) return fmt_double(c.*field);
                else return std::to_string(c.*field);
            },
            [field, name](TrainConfig& c, std::string_view s) { c.*field = parse_number<T>(name, s); }};
}

template <class S, class T>
Binding nested(std::string_view name, std::string_view meaning, S TrainConfig::*outer, T S::*field) {
    return {{name, meaning},
            [outer, field](const TrainConfig& c) {
                if constexpr (std::is_floating_point_v<T>) return fmt_double(c.*outer.*field);
                else return std::to_string(c.*outer.*field);
            },
            [outer, field, name](TrainConfig& c, std::string_view s) { c.*outer.*field = parse_number<T>(name, s); }};
}

const std::vector<Binding>& bindings() {
    static const std::vector<Binding> b = [] {
        std::vector<Binding> v;
        v.push_back(nested("model.vocab", "text vocabulary size", &TrainConfig::model, &ModelConfig::vocab));
        v.push_back(nested("model.width", "hidden size", &TrainConfig::model, &ModelConfig::width));
        v.push_back(nested("model.layers", "number of MoT layers", &TrainConfig::model, &ModelConfig::layers));
        v.push_back(nested("model.head_size", "attention head size", &TrainConfig::model, &ModelConfig::head_size));
        v.push_back(nested("model.kv_heads", "key/value heads (query heads = width / head_size)", &TrainConfig::model,
                           &ModelConfig::kv_heads));
        v.push_back(nested("model.ffn_mult", "feedforward expansion", &TrainConfig::model, &ModelConfig::ffn_mult));
        v.push_back(nested("model.norm_eps", "RMS norm epsilon", &TrainConfig::model, &ModelConfig::norm_eps));
        v.push_back({{"rope.dims", "head dims for the T/H/W axes, as T/H/W"},
                     [](const TrainConfig& c) {
                         const auto& r = c.model.rope;
                         return std::to_string(r.dims_t) + "/" + std::to_string(r.dims_h) + "/" +
                                std::to_string(r.dims_w);
                     },
                     [](TrainConfig& c, std::string_view s) {
                         std::size_t parts[3];
                         for (int i = 0; i < 3; ++i) {
                             const auto slash = s.find('/');
                             require((slash == std::string_view::npos) == (i == 2), ErrorCode::format,
                                     "rope.dims expects T/H/W");
                             parts[i] = parse_number<std::size_t>("rope.dims", s.substr(0, slash));
                             if (slash != std::string_view::npos) s.remove_prefix(slash + 1);
                         }
                         c.model.rope.dims_t = parts[0];
                         c.model.rope.dims_h = parts[1];
                         c.model.rope.dims_w = parts[2];
                     }});
        v.push_back({{"rope.theta_t", "temporal rotary base"},
                     [](const TrainConfig& c) { return fmt_double(c.model.rope.theta_t); },
                     [](TrainConfig& c, std::string_view s) { c.model.rope.theta_t = parse_number<double>("rope.theta_t", s); }});
        v.push_back({{"rope.theta_hw", "spatial rotary base (H and W)"},
                     [](const TrainConfig& c) { return fmt_double(c.model.rope.theta_h); },
                     [](TrainConfig& c, std::string_view s) {
                         c.model.rope.theta_h = c.model.rope.theta_w = parse_number<double>("rope.theta_hw", s);
                     }});
        v.push_back(nested("data.seed", "synthetic dataset seed", &TrainConfig::data, &SyntheticSpec::seed));
        v.push_back(nested("data.count", "synthetic sample count", &TrainConfig::data, &SyntheticSpec::count));
        v.push_back(nested("data.height", "image height (multiple of 32)", &TrainConfig::data, &SyntheticSpec::height));
        v.push_back(nested("data.width", "image width (multiple of 32)", &TrainConfig::data, &SyntheticSpec::width));
        v.push_back(nested("optimizer.lr", "AdamW learning rate (constant)", &TrainConfig::optimizer, &OptimizerConfig::lr));
        v.push_back(nested("optimizer.beta1", "AdamW beta1", &TrainConfig::optimizer, &OptimizerConfig::beta1));
        v.push_back(nested("optimizer.beta2", "AdamW beta2", &TrainConfig::optimizer, &OptimizerConfig::beta2));
        v.push_back(nested("optimizer.eps", "AdamW epsilon", &TrainConfig::optimizer, &OptimizerConfig::eps));
        v.push_back(nested("optimizer.weight_decay", "AdamW decoupled weight decay", &TrainConfig::optimizer,
                           &OptimizerConfig::weight_decay));
        v.push_back(number("train.seed", "training seed (init, batches, noise)", &TrainConfig::seed));
        v.push_back(number("train.steps", "optimizer steps", &TrainConfig::steps));
        v.push_back(number("train.batch_size", "samples per step", &TrainConfig::batch_size));
        v.push_back(number("train.grad_clip", "global gradient norm clip", &TrainConfig::grad_clip));
        v.push_back(number("train.ema_ratio", "EMA ratio", &TrainConfig::ema_ratio));
        v.push_back(nested("loss.weight_ce", "lambda_1, weight of the text cross-entropy", &TrainConfig::loss,
                           &LossWeights::und));
        v.push_back(nested("loss.weight_mse", "lambda_2, weight of the velocity MSE", &TrainConfig::loss,
                           &LossWeights::gen));
        v.push_back(number("cfg_dropout.text", "probability of dropping the text condition", &TrainConfig::drop_text));
        v.push_back(number("cfg_dropout.all", "probability of dropping text and image conditions", &TrainConfig::drop_all));
        v.push_back(number("t_sampler.mu", "logit-normal t-sampler mean", &TrainConfig::t_mu));
        v.push_back(number("t_sampler.sigma", "logit-normal t-sampler std", &TrainConfig::t_sigma));
        v.push_back(number("noise_scale.sigma0", "base noise scale sigma0", &TrainConfig::sigma0));
        v.push_back(number("noise_scale.n0", "reference token count N0", &TrainConfig::n0));
        v.push_back(number("noise_scale.max_height", "largest resolution height, sets sigma_max", &TrainConfig::max_height));
        v.push_back(number("noise_scale.max_width", "largest resolution width, sets sigma_max", &TrainConfig::max_width));
        return v;
    }();
    return b;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

}  // namespace

const std::vector<ConfigKey>& config_schema() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        for (const auto& b : bindings()) k.push_back(b.key);
        return k;
    }();
    return keys;
}

TrainConfig parse_config(std::string_view text) {
    TrainConfig cfg;
    std::map<std::string_view, const Binding*> index;
    for (const auto& b : bindings()) index.emplace(b.key.name, &b);
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        require(eq != std::string_view::npos, ErrorCode::format,
                "config line " + std::to_string(line_no) + ": expected 'key = value'");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        auto it = index.find(key);
        require(it != index.end(), ErrorCode::format,
                "config line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
        it->second->set(cfg, value);
    }
    cfg.validate();
    return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::io, "cannot open config " + path.string());
    const std::string text(std::istreambuf_iterator<char>(in), {});
    return parse_config(text);
}

std::string format_config(const TrainConfig& cfg) {
    std::string out;
    for (const auto& b : bindings()) {
        out += std::string(b.key.name) + " = " + b.get(cfg) + "\n";
    }
    return out;
}

}  // namespace unimot
