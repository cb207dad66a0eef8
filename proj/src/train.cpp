#include "unimot/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "unimot/error.hpp"
#include "unimot/flow.hpp"
#include "unimot/ops.hpp"

namespace unimot {

double global_norm(std::span<const Tensor> grads) {
    double s = 0.0;
    for (const auto& g : grads) {
        for (double v : g.data()) s += v * v;
    }
    return std::sqrt(s);
}

double clip_grad_norm(std::span<Tensor> grads, double max_norm) {
    require(max_norm > 0.0, ErrorCode::invalid_argument, "clip_grad_norm: max_norm must be positive");
    const double norm = global_norm(grads);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& g : grads) {
            for (double& v : g.data()) v *= s;
        }
    }
    return norm;
}

void ema_update(Tensor& shadow, const Tensor& params, double ratio) {
    require(shadow.shape() == params.shape(), ErrorCode::shape_mismatch,
            "ema_update: shadow " + shape_str(shadow.shape()) + " vs params " + shape_str(params.shape()));
    require(ratio >= 0.0 && ratio < 1.0, ErrorCode::invalid_argument, "ema_update: ratio must be in [0, 1)");
    for (std::size_t i = 0; i < shadow.size(); ++i) shadow[i] = ratio * shadow[i] + (1.0 - ratio) * params[i];
}

void ema_update(ModelParams& shadow, const ModelParams& params, double ratio) {
    std::vector<const Tensor*> src;
    params.for_each([&](const std::string&, const Tensor& t) { src.push_back(&t); });
    std::size_t i = 0;
    shadow.for_each([&](const std::string& name, Tensor& t) {
        require(i < src.size(), ErrorCode::shape_mismatch, "ema_update: extra shadow tensor " + name);
        ema_update(t, *src[i++], ratio);
    });
    require(i == src.size(), ErrorCode::shape_mismatch, "ema_update: shadow is missing tensors");
}

std::vector<Tensor> zero_grads(const ModelParams& params) {
    std::vector<Tensor> g;
    params.for_each([&](const std::string&, const Tensor& t) { g.emplace_back(t.shape()); });
    return g;
}

AdamW::AdamW(const ModelParams& params, const OptimizerConfig& cfg)
    : cfg_(cfg), m_(zero_grads(params)), v_(zero_grads(params)) {}

void AdamW::step(ModelParams& params, std::span<const Tensor> grads) {
    require(grads.size() == m_.size(), ErrorCode::shape_mismatch, "AdamW: gradient count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::size_t k = 0;
    params.for_each([&](const std::string& name, Tensor& p) {
        const Tensor& g = grads[k];
        require(g.shape() == p.shape(), ErrorCode::shape_mismatch, "AdamW: gradient shape mismatch for " + name);
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            p[i] -= cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * p[i]);
        }
        ++k;
    });
}

TrainingExample build_training_example(const Example& ex, ConditionFlags flags, double t, const Tensor& eps,
                                       double sigma_r, double sigma_bar) {
    TrainingExample out;
    out.t = t;
    out.z = interpolate(ex.image, eps, t, sigma_r);
    out.v_star = target_velocity(ex.image, out.z, t);
    if (flags.text_present) {
        out.seq.items.emplace_back(TextItem{ex.caption});
        for (std::size_t i = 0; i + 1 < ex.caption.size(); ++i) {
            out.target_rows.push_back(i);
            out.targets.push_back(ex.caption[i + 1]);
        }
    }
    out.seq.items.emplace_back(MarkerItem{Marker::image_open});
    out.seq.items.emplace_back(NoiseImageItem{out.z, t, sigma_bar, false});
    return out;
}

LossVars example_loss(ad::Tape& tape, const TrainingExample& ex, const ModelParams& params, double ce_weight,
                      double mse_weight) {
    auto fwd = model_forward(tape, ex.seq, params);
    LossVars lv;
    if (ex.targets.empty()) {
        lv.ce_sum = tape.constant(Tensor::scalar(0.0));
    } else {
        auto rows = ad::gather_rows(tape, fwd.text_logits, ex.target_rows);
        lv.ce_sum = ad::cross_entropy_sum(tape, rows, ex.targets);
    }
    // v_theta = (x_hat - z) / (1 - t)
    auto diff = ad::add_const(tape, fwd.x_hat.back(), scale(ex.z, -1.0));
    auto v = ad::scale(tape, diff, 1.0 / (1.0 - ex.t));
    lv.mse = ad::mse(tape, v, ex.v_star);
    const std::pair<ad::Var, double> terms[] = {{lv.ce_sum, ce_weight}, {lv.mse, mse_weight}};
    lv.weighted = ad::weighted_sum(tape, terms);
    return lv;
}

double example_loss_shift(const TrainingExample& ex, const ModelParams& params, const ModelOutput& reference,
                          double ce_weight, double mse_weight) {
    const ModelOutput out = model_forward(ex.seq, params);
    require(out.x_hat.size() == 1 && reference.x_hat.size() == 1 && out.x_hat[0].shape() == ex.z.shape(),
            ErrorCode::shape_mismatch, "example_loss_shift: forward passes do not match the example");
    CompensatedSum ce;
    for (std::size_t k = 0; k < ex.targets.size(); ++k) {
        const std::size_t r = ex.target_rows[k];
        const auto row = out.text_logits.row(r);
        const auto ref = reference.text_logits.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        const double mr = *std::max_element(ref.begin(), ref.end());
        double s = 0.0, sr = 0.0;
        for (std::size_t j = 0; j < row.size(); ++j) {
            s += std::exp(row[j] - mx);
            sr += std::exp(ref[j] - mr);
        }
        // lse - lse_ref - (z_y - z_y,ref)
        ce.add(mx - mr);
        ce.add(std::log(s / sr));
        const auto y = static_cast<std::size_t>(ex.targets[k]);
        ce.add(-(row[y] - ref[y]));
    }
    const double inv = 1.0 / (1.0 - ex.t);
    CompensatedSum sq;
    const Tensor& xh = out.x_hat[0];
    const Tensor& xr = reference.x_hat[0];
    for (std::size_t i = 0; i < xh.size(); ++i) {
        const double a = (xh[i] - ex.z[i]) * inv - ex.v_star[i];
        const double b = (xr[i] - ex.z[i]) * inv - ex.v_star[i];
        sq.add((a - b) * (a + b));
    }
    return ce_weight * ce.value() + mse_weight * sq.value() / static_cast<double>(xh.size());
}

std::string format_metrics(const StepMetrics& m) {
    nlohmann::ordered_json j;
    j["step"] = m.step;
    j["ce"] = m.ce;
    j["mse"] = m.mse;
    j["total"] = m.total;
    j["grad_norm"] = m.grad_norm;
    return j.dump();
}

StepMetrics parse_metrics(const std::string& line) {
    try {
        const auto j = nlohmann::json::parse(line);
        StepMetrics m;
        m.step = j.at("step").get<std::uint64_t>();
        m.ce = j.at("ce").get<double>();
        m.mse = j.at("mse").get<double>();
        m.total = j.at("total").get<double>();
        m.grad_norm = j.at("grad_norm").get<double>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::format, std::string("bad metrics line: ") + e.what());
    }
}

std::size_t thread_count_from_env() {
    const char* s = std::getenv("UNIMOT_THREADS");
    if (s == nullptr || *s == '\0') return 1;
    char* end = nullptr;
    const long n = std::strtol(s, &end, 10);
    require(end != s && *end == '\0' && n >= 1 && n <= 256, ErrorCode::invalid_argument,
            std::string("UNIMOT_THREADS must be an integer in [1, 256], got '") + s + "'");
    return static_cast<std::size_t>(n);
}

Checkpoint initial_checkpoint(const TrainConfig& cfg) {
    cfg.validate();
    const RandomStream root(cfg.seed);
    Checkpoint ck;
    ck.config = cfg;
    ck.params = init_model(cfg.model, root.split("init"));
    ck.ema = ck.params;
    ck.rng = root;
    ck.step = 0;
    return ck;
}

namespace {

struct SampleWork {
    TrainingExample ex;
    double ce_sum = 0.0;
    double mse = 0.0;
    std::vector<Tensor> grads;
};

void run_sample(SampleWork& w, const ModelParams& params, double ce_weight, double mse_weight) {
    ad::Tape tape;
    auto lv = example_loss(tape, w.ex, params, ce_weight, mse_weight);
    w.ce_sum = tape.value(lv.ce_sum)[0];
    w.mse = tape.value(lv.mse)[0];
    tape.backward(lv.weighted);
    w.grads.clear();
    params.for_each([&](const std::string&, const Tensor& p) { w.grads.push_back(tape.grad_of(p)); });
}

}  // namespace

Checkpoint train(const TrainConfig& cfg, std::span<const Example> data, const StepCallback& on_step,
                 std::size_t threads) {
    Checkpoint ck = initial_checkpoint(cfg);
    require(!data.empty(), ErrorCode::invalid_argument, "train: empty dataset");
    for (const auto& ex : data) {
        require(ex.image.shape() == Shape{kChannels, cfg.data.height, cfg.data.width}, ErrorCode::shape_mismatch,
                "train: dataset image " + shape_str(ex.image.shape()) + " does not match the configured size");
    }
    threads = std::max<std::size_t>(1, std::min(threads, cfg.batch_size));
    const NoiseScaleConfig noise = cfg.noise();
    const double sigma_r = noise_scale(cfg.data.height, cfg.data.width, noise);
    const double sigma_bar = normalized_noise_scale(sigma_r, noise);
    const RandomStream steps_rng = ck.rng.split("step");
    AdamW opt(ck.params, cfg.optimizer);
    const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);

    for (std::uint64_t step = 0; step < cfg.steps; ++step) {
        const RandomStream srng = steps_rng.split(step);
        RandomStream pick = srng.split("batch");
        std::vector<SampleWork> work(cfg.batch_size);
        std::size_t n_targets = 0;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const Example& ex = data[pick.below(static_cast<std::uint32_t>(data.size()))];
            const RandomStream r = srng.split(b);
            RandomStream drop = r.split("drop");
            RandomStream flow = r.split("flow");
            const ConditionFlags flags = drop_conditions(drop, cfg.drop_text, cfg.drop_all);
            const double t = std::min(sample_t(flow, cfg.t_mu, cfg.t_sigma), 1.0 - kTimeClamp);
            const Tensor eps = standard_normal(ex.image.shape(), flow);
            work[b].ex = build_training_example(ex, flags, t, eps, sigma_r, sigma_bar);
            n_targets += work[b].ex.targets.size();
        }
        const double ce_weight = n_targets > 0 ? cfg.loss.und / static_cast<double>(n_targets) : 0.0;
        const double mse_weight = cfg.loss.gen * inv_b;

        if (threads == 1) {
            for (auto& w : work) run_sample(w, ck.params, ce_weight, mse_weight);
        } else {
            std::vector<std::thread> pool;
            std::vector<std::exception_ptr> errors(threads);
            for (std::size_t k = 0; k < threads; ++k) {
                pool.emplace_back([&, k] {
                    try {
                        for (std::size_t b = k; b < work.size(); b += threads) {
                            run_sample(work[b], ck.params, ce_weight, mse_weight);
                        }
                    } catch (...) {
                        errors[k] = std::current_exception();
                    }
                });
            }
            for (auto& th : pool) th.join();
            for (auto& e : errors) {
                if (e) std::rethrow_exception(e);
            }
        }

        StepMetrics m;
        m.step = step + 1;
        double ce_sum = 0.0;
        std::vector<Tensor> grads = std::move(work[0].grads);
        for (std::size_t b = 0; b < work.size(); ++b) {
            ce_sum += work[b].ce_sum;
            m.mse += work[b].mse;
            if (b == 0) continue;
            for (std::size_t k = 0; k < grads.size(); ++k) {
                auto dst = grads[k].data();
                auto src = work[b].grads[k].data();
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
            }
        }
        m.ce = n_targets > 0 ? ce_sum / static_cast<double>(n_targets) : 0.0;
        m.mse *= inv_b;
        m.total = total_loss(m.ce, m.mse, cfg.loss);
        if (!std::isfinite(m.total)) {
            std::ostringstream os;
            os << "non-finite loss at step " << m.step << ": ce=" << m.ce << " mse=" << m.mse;
            fail(ErrorCode::non_finite, os.str());
        }
        m.grad_norm = clip_grad_norm(grads, cfg.grad_clip);
        require(std::isfinite(m.grad_norm), ErrorCode::non_finite,
                "non-finite gradient norm at step " + std::to_string(m.step));
        opt.step(ck.params, grads);
        ema_update(ck.ema, ck.params, cfg.ema_ratio);
        ck.step = m.step;
        ck.rng = RandomStream(ck.rng.key(), ck.step);
        if (on_step) on_step(m);
    }
    return ck;
}

}  // namespace unimot
