#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "unimot/unimot.h"

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

void print_line(const char* line, void*) { std::printf("%s\n", line); }

int report(unimot_status s) {
    if (s == UNIMOT_OK) return kOk;
    std::fprintf(stderr, "error: %s\n", unimot_last_error());
    return s == UNIMOT_ERR_INVALID_ARGUMENT ? kUsage : kFailure;
}

bool read_text(const std::string& path, std::string& out) {
    std::ifstream in(path);
    if (!in) return false;
    std::ostringstream ss;
    ss << in.rdbuf();
    out = ss.str();
    return true;
}

struct ModelHandle {
    unimot_model* p = nullptr;
    ~ModelHandle() { unimot_model_free(p); }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unified text and image mixture-of-transformers toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(unimot_version()));

    std::string config_path, out_dir;
    auto* train = app.add_subcommand("train", "Train from a config file");
    train->add_option("--config", config_path, "key = value config file")->required()->check(CLI::ExistingFile);
    train->add_option("--out", out_dir, "output directory")->required();
    bool quiet = false;
    train->add_flag("--quiet", quiet, "do not echo metrics to stdout");

    unimot_sampler_config sc;
    unimot_sampler_config_default(&sc);
    std::string checkpoint, prompt_file, output_ppm, weights = "raw", renorm = sc.renorm ? "on" : "off";
    std::size_t height = 0, width = 0;
    auto* sample = app.add_subcommand("sample", "Generate an image from a checkpoint");
    sample->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    sample->add_option("--prompt", prompt_file, "file of words or token ids")->required()->check(CLI::ExistingFile);
    sample->add_option("--height,-H", height)->required();
    sample->add_option("--width,-W", width)->required();
    sample->add_option("--steps", sc.steps)->capture_default_str();
    sample->add_option("--shift", sc.shift)->capture_default_str();
    sample->add_option("--gamma", sc.gamma)->capture_default_str();
    sample->add_option("--gamma-img", sc.gamma_img)->capture_default_str();
    sample->add_option("--renorm", renorm)->check(CLI::IsMember({"on", "off"}))->capture_default_str();
    sample->add_option("--seed", sc.seed)->capture_default_str();
    sample->add_option("--weights", weights)->check(CLI::IsMember({"raw", "ema"}))->capture_default_str();
    sample->add_option("--output,-o", output_ppm, "PPM path")->required();

    std::string filter, inject;
    auto* verify = app.add_subcommand("verify", "Run the invariant suite");
    verify->add_option("--filter", filter, "module name");
    verify->add_option("--inject", inject, "comma-separated faults: rope-theta, noise-leak");

    std::string layout;
    std::size_t block_size = 4, repeats = 50;
    auto* bench = app.add_subcommand("bench", "Plan and time attention for a layout");
    bench->add_option("--layout", layout, "e.g. T16,I4x4,T8,N4x4")->required();
    bench->add_option("--block-size", block_size)->capture_default_str();
    bench->add_option("--repeats", repeats)->capture_default_str();

    std::string reward_dir;
    std::size_t epoch = 0;
    double lambda_sty = 1.0;
    auto* reward = app.add_subcommand("reward", "Score rendered images");
    reward->add_option("--dir", reward_dir)->required();
    reward->add_option("--epoch", epoch)->capture_default_str();
    reward->add_option("--lambda-sty", lambda_sty)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    if (train->parsed()) {
        return report(unimot_train(config_path.c_str(), out_dir.c_str(), 0, quiet ? nullptr : print_line, nullptr));
    }
    if (sample->parsed()) {
        sc.renorm = renorm == "on" ? 1 : 0;
        std::string text;
        if (!read_text(prompt_file, text)) {
            std::fprintf(stderr, "error: cannot read %s\n", prompt_file.c_str());
            return kFailure;
        }
        std::size_t n = 0;
        if (auto s = unimot_parse_prompt(text.c_str(), nullptr, 0, &n); s != UNIMOT_OK) return report(s);
        std::vector<int32_t> ids(n);
        if (auto s = unimot_parse_prompt(text.c_str(), ids.data(), ids.size(), &n); s != UNIMOT_OK) return report(s);
        ModelHandle model;
        if (auto s = unimot_model_load(checkpoint.c_str(), weights == "ema", &model.p); s != UNIMOT_OK) {
            return report(s);
        }
        std::vector<double> pixels(3 * height * width);
        if (auto s = unimot_sample(model.p, ids.data(), ids.size(), height, width, &sc, pixels.data(), pixels.size());
            s != UNIMOT_OK) {
            return report(s);
        }
        return report(unimot_write_ppm(output_ppm.c_str(), pixels.data(), height, width));
    }
    if (verify->parsed()) {
        std::size_t failed = 0;
        const auto s = unimot_verify(filter.c_str(), inject.c_str(), print_line, nullptr, &failed);
        if (s != UNIMOT_OK) return report(s);
        std::fflush(stdout);
        if (failed > 0) std::fprintf(stderr, "%zu invariant(s) failed\n", failed);
        return failed == 0 ? kOk : kFailure;
    }
    if (bench->parsed()) return report(unimot_bench(layout.c_str(), block_size, repeats, print_line, nullptr));
    if (reward->parsed()) return report(unimot_reward(reward_dir.c_str(), epoch, lambda_sty, print_line, nullptr));
    return kUsage;
}
