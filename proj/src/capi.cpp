#include "unimot/unimot.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <new>
#include <string>

#include "unimot/bench.hpp"
#include "unimot/checkpoint.hpp"
#include "unimot/error.hpp"
#include "unimot/rewards.hpp"
#include "unimot/sampler.hpp"
#include "unimot/train.hpp"
#include "unimot/verify.hpp"

struct unimot_model {
    unimot::Checkpoint ckpt;
    bool use_ema = false;

    const unimot::ModelParams& params() const { return use_ema ? ckpt.ema : ckpt.params; }
};

namespace {

thread_local std::string g_last_error;

unimot_status status_of(unimot::ErrorCode code) {
    using unimot::ErrorCode;
    switch (code) {
        case ErrorCode::invalid_argument: return UNIMOT_ERR_INVALID_ARGUMENT;
        case ErrorCode::shape_mismatch: return UNIMOT_ERR_SHAPE;
        case ErrorCode::non_finite: return UNIMOT_ERR_NUMERIC;
        case ErrorCode::io: return UNIMOT_ERR_IO;
        case ErrorCode::format:
        case ErrorCode::checksum:
        case ErrorCode::version: return UNIMOT_ERR_FORMAT;
    }
    return UNIMOT_ERR_INTERNAL;
}

template <class F>
unimot_status guarded(F&& f) {
    g_last_error.clear();
    try {
        f();
        return UNIMOT_OK;
    } catch (const unimot::Error& e) {
        g_last_error = e.what();
        return status_of(e.code());
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return UNIMOT_ERR_INTERNAL;
    } catch (const std::filesystem::filesystem_error& e) {
        g_last_error = e.what();
        return UNIMOT_ERR_IO;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return UNIMOT_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return UNIMOT_ERR_INTERNAL;
    }
}

void need(const void* p, const char* what) {
    unimot::require(p != nullptr, unimot::ErrorCode::invalid_argument, std::string(what) + " is null");
}

void emit(unimot_line_sink sink, void* user, const std::string& line) {
    if (sink) sink(line.c_str(), user);
}

}  // namespace

extern "C" {

const char* unimot_last_error(void) { return g_last_error.c_str(); }

const char* unimot_version(void) { return "0.1.0"; }

unimot_status unimot_train(const char* config_path, const char* out_dir, size_t threads, unimot_line_sink metrics,
                           void* user) {
    return guarded([&] {
        need(config_path, "config path");
        need(out_dir, "output directory");
        const auto cfg = unimot::load_config(config_path);
        const std::filesystem::path dir(out_dir);
        std::filesystem::create_directories(dir);
        {
            std::ofstream echo(dir / "config.txt");
            unimot::require(static_cast<bool>(echo), unimot::ErrorCode::io, "cannot write " + (dir / "config.txt").string());
            echo << unimot::format_config(cfg);
        }
        std::ofstream log(dir / "metrics.jsonl", std::ios::trunc);
        unimot::require(static_cast<bool>(log), unimot::ErrorCode::io, "cannot write " + (dir / "metrics.jsonl").string());
        const auto data = unimot::make_dataset(cfg.data);
        const std::size_t n = threads == 0 ? unimot::thread_count_from_env() : threads;
        const auto ckpt = unimot::train(
            cfg, data,
            [&](const unimot::StepMetrics& m) {
                const std::string line = unimot::format_metrics(m);
                log << line << '\n';
                emit(metrics, user, line);
            },
            n);
        log.flush();
        unimot::require(static_cast<bool>(log), unimot::ErrorCode::io, "failed writing metrics log");
        unimot::save_checkpoint(dir / "checkpoint.umot", ckpt);
    });
}

unimot_status unimot_model_load(const char* checkpoint_path, int use_ema, unimot_model** out) {
    return guarded([&] {
        need(checkpoint_path, "checkpoint path");
        need(out, "output handle");
        *out = nullptr;
        auto m = std::make_unique<unimot_model>();
        m->ckpt = unimot::load_checkpoint(checkpoint_path);
        m->use_ema = use_ema != 0;
        *out = m.release();
    });
}

void unimot_model_free(unimot_model* model) { delete model; }

unimot_status unimot_model_get_info(const unimot_model* model, unimot_model_info* out) {
    return guarded([&] {
        need(model, "model");
        need(out, "info");
        const auto& c = model->ckpt.config;
        out->vocab = c.model.vocab;
        out->width = c.model.width;
        out->layers = c.model.layers;
        out->head_size = c.model.head_size;
        out->q_heads = c.model.q_heads();
        out->kv_heads = c.model.kv_heads;
        out->parameters = model->params().parameter_count();
        out->train_height = c.data.height;
        out->train_width = c.data.width;
        out->step = model->ckpt.step;
    });
}

void unimot_sampler_config_default(unimot_sampler_config* cfg) {
    if (!cfg) return;
    const unimot::SamplerConfig d;
    cfg->steps = d.steps;
    cfg->shift = d.shift;
    cfg->gamma = d.gamma;
    cfg->gamma_img = d.gamma_img;
    cfg->renorm = d.renorm ? 1 : 0;
    cfg->seed = 0;
}

unimot_status unimot_parse_prompt(const char* text, int32_t* ids, size_t capacity, size_t* count) {
    return guarded([&] {
        need(text, "prompt text");
        need(count, "count");
        auto v = unimot::parse_prompt(text);
        if (v.empty() || v.front() != unimot::Vocabulary::bos) v.insert(v.begin(), unimot::Vocabulary::bos);
        if (v.back() != unimot::Vocabulary::eos) v.push_back(unimot::Vocabulary::eos);
        *count = v.size();
        if (ids) {
            for (std::size_t i = 0; i < v.size() && i < capacity; ++i) ids[i] = v[i];
        }
    });
}

unimot_status unimot_sample(const unimot_model* model, const int32_t* tokens, size_t n_tokens, size_t height,
                            size_t width, const unimot_sampler_config* cfg, double* pixels, size_t pixels_len) {
    return guarded([&] {
        need(model, "model");
        need(cfg, "sampler config");
        need(pixels, "pixel buffer");
        unimot::require(n_tokens == 0 || tokens != nullptr, unimot::ErrorCode::invalid_argument, "tokens are null");
        unimot::check_image_dims(height, width);
        unimot::require(pixels_len == 3 * height * width, unimot::ErrorCode::shape_mismatch,
                        "pixel buffer holds " + std::to_string(pixels_len) + " values, need " +
                            std::to_string(3 * height * width));
        unimot::SamplerConfig sc;
        sc.steps = cfg->steps;
        sc.shift = cfg->shift;
        sc.gamma = cfg->gamma;
        sc.gamma_img = cfg->gamma_img;
        sc.renorm = cfg->renorm != 0;
        unimot::GenerationContext ctx;
        if (n_tokens > 0) ctx.items.emplace_back(unimot::TextItem{std::vector<int>(tokens, tokens + n_tokens)});
        const unimot::ModelPredictor predictor(model->params());
        const auto res = unimot::sample(predictor, ctx, height, width, sc, model->ckpt.config.noise(),
                                        unimot::RandomStream(cfg->seed));
        std::memcpy(pixels, res.image.data().data(), pixels_len * sizeof(double));
    });
}

unimot_status unimot_write_ppm(const char* path, const double* pixels, size_t height, size_t width) {
    return guarded([&] {
        need(path, "path");
        need(pixels, "pixels");
        unimot::check_image_dims(height, width);
        unimot::Tensor img({3, height, width}, std::vector<double>(pixels, pixels + 3 * height * width));
        unimot::write_ppm(path, img);
    });
}

unimot_status unimot_verify(const char* filter, const char* faults, unimot_line_sink sink, void* user,
                            size_t* n_failed) {
    return guarded([&] {
        const auto f = unimot::parse_faults(faults ? faults : "");
        std::size_t failed = 0;
        unimot::run_invariant_suite(filter ? filter : "", f, [&](const unimot::CheckResult& r) {
            failed += r.passed ? 0 : 1;
            emit(sink, user, unimot::format_check(r));
        });
        if (n_failed) *n_failed = failed;
    });
}

unimot_status unimot_bench(const char* layout, size_t block_size, size_t repeats, unimot_line_sink sink, void* user) {
    return guarded([&] {
        need(layout, "layout");
        unimot::BenchOptions opts;
        opts.block_size = block_size;
        opts.repeats = repeats;
        for (const auto& line : unimot::run_bench(layout, opts)) emit(sink, user, line);
    });
}

unimot_status unimot_reward(const char* dir, size_t epoch, double lambda_sty, unimot_line_sink sink, void* user) {
    return guarded([&] {
        need(dir, "directory");
        const unimot::StubScorer scorer;
        const unimot::SidecarTextExtractor extractor;
        for (const auto& r : unimot::evaluate_reward_dir(dir, epoch, lambda_sty, scorer, extractor)) {
            emit(sink, user, unimot::format_reward_record(r));
        }
    });
}

}  // extern "C"
