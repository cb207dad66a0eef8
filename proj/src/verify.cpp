#include "unimot/verify.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "unimot/attention.hpp"
#include "unimot/checkpoint.hpp"
#include "unimot/dataset.hpp"
#include "unimot/error.hpp"
#include "unimot/flow.hpp"
#include "unimot/mot.hpp"
#include "unimot/ops.hpp"
#include "unimot/patch_codec.hpp"
#include "unimot/rewards.hpp"
#include "unimot/rope.hpp"
#include "unimot/sampler.hpp"
#include "unimot/train.hpp"

namespace unimot {

FaultSet parse_faults(std::string_view names) {
    FaultSet f;
    while (!names.empty()) {
        const auto comma = names.find(',');
        const auto name = names.substr(0, comma);
        names = comma == std::string_view::npos ? std::string_view{} : names.substr(comma + 1);
        if (name.empty()) continue;
        if (name == "rope-theta") {
            f.rope_theta = true;
        } else if (name == "noise-leak") {
            f.noise_leak = true;
        } else {
            fail(ErrorCode::invalid_argument, "unknown fault '" + std::string(name) + "'");
        }
    }
    return f;
}

std::vector<std::string> fault_names() { return {"rope-theta", "noise-leak"}; }

std::string format_check(const CheckResult& r) {
    nlohmann::ordered_json j;
    j["module"] = r.module;
    j["name"] = r.name;
    j["passed"] = r.passed;
    if (std::isfinite(r.measured)) j["measured"] = r.measured;
    else j["measured"] = nullptr;
    j["tolerance"] = r.tolerance;
    j["detail"] = r.detail;
    return j.dump();
}

CheckResult parse_check(std::string_view line) {
    try {
        const auto j = nlohmann::json::parse(line);
        CheckResult r;
        r.module = j.at("module").get<std::string>();
        r.name = j.at("name").get<std::string>();
        r.passed = j.at("passed").get<bool>();
        const auto& m = j.at("measured");
        r.measured = m.is_null() ? std::numeric_limits<double>::quiet_NaN() : m.get<double>();
        r.tolerance = j.at("tolerance").get<double>();
        r.detail = j.at("detail").get<std::string>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::format, std::string("bad report line: ") + e.what());
    }
}

SegmentLayout random_layout(RandomStream& rng, std::size_t max_tokens, bool with_noise) {
    SegmentLayout layout;
    std::size_t total = 0;
    const std::size_t target = 1 + rng.below(static_cast<std::uint32_t>(max_tokens));
    while (total < target) {
        const std::size_t room = max_tokens - total;
        const std::uint32_t kind = rng.below(with_noise ? 4 : 2);
        if (kind == 0 || room < 2) {
            const std::size_t n = 1 + rng.below(static_cast<std::uint32_t>(std::min<std::size_t>(room, 8)));
            layout.segments.push_back(Segment::text(n));
            total += n;
            continue;
        }
        std::size_t r = 1 + rng.below(3);
        std::size_t c = 1 + rng.below(3);
        const bool paired = kind == 3;
        const std::size_t need = r * c * (paired ? 2 : 1);
        if (need > room) {
            r = 1;
            c = 1;
            if ((paired ? 2u : 1u) > room) continue;
        }
        if (kind == 1) {
            layout.segments.push_back(Segment::clean(r, c));
        } else {
            layout.segments.push_back(Segment::noise(r, c, paired));
            if (paired) layout.segments.push_back(Segment::clean(r, c));
        }
        total += r * c * (paired ? 2 : 1);
    }
    layout.validate();
    return layout;
}

TapeGradCheck tape_grad_check(const NamedParams& params, const std::function<ad::Var(ad::Tape&)>& build,
                              double step, std::size_t per_tensor, RandomStream rng) {
    auto value = [&] {
        ad::Tape tape;
        return tape.value(build(tape))[0];
    };
    return tape_grad_check(params, build, value, step, per_tensor, rng);
}

TapeGradCheck model_grad_check(ModelParams& params, const TrainingExample& ex, double ce_weight, double mse_weight,
                               double step, std::size_t per_tensor, RandomStream rng) {
    const ModelOutput reference = model_forward(ex.seq, params);
    NamedParams np;
    params.for_each([&](const std::string& n, Tensor& t) { np.emplace_back(n, &t); });
    auto build = [&](ad::Tape& t) { return example_loss(t, ex, params, ce_weight, mse_weight).weighted; };
    auto value = [&] { return example_loss_shift(ex, params, reference, ce_weight, mse_weight); };
    return tape_grad_check(np, build, value, step, per_tensor, rng);
}

TapeGradCheck tape_grad_check(const NamedParams& params, const std::function<ad::Var(ad::Tape&)>& build,
                              const std::function<double()>& value, double step, std::size_t per_tensor,
                              RandomStream rng) {
    std::vector<double> flat;
    std::vector<std::size_t> offsets;
    for (const auto& [name, t] : params) {
        offsets.push_back(flat.size());
        flat.insert(flat.end(), t->data().begin(), t->data().end());
    }
    auto scatter = [&](std::span<const double> v) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto dst = params[i].second->data();
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(offsets[i]), dst.size(), dst.begin());
        }
    };

    std::vector<double> analytic;
    {
        ad::Tape tape;
        auto loss = build(tape);
        tape.backward(loss);
        for (const auto& [name, t] : params) {
            const Tensor g = tape.grad_of(*t);
            analytic.insert(analytic.end(), g.data().begin(), g.data().end());
        }
    }

    std::vector<std::size_t> coords;
    if (per_tensor == 0) {
        coords.resize(flat.size());
        for (std::size_t i = 0; i < flat.size(); ++i) coords[i] = i;
    } else {
        for (std::size_t i = 0; i < params.size(); ++i) {
            const std::size_t n = params[i].second->size();
            std::set<std::size_t> picked;
            if (n <= per_tensor) {
                for (std::size_t k = 0; k < n; ++k) picked.insert(k);
            } else {
                while (picked.size() < per_tensor) picked.insert(rng.below(static_cast<std::uint32_t>(n)));
            }
            for (auto k : picked) coords.push_back(offsets[i] + k);
        }
    }

    auto loss_fn = [&](std::span<const double> v) {
        scatter(v);
        return value();
    };
    TapeGradCheck out;
    try {
        out.report = grad_check(loss_fn, analytic, flat, step, std::span<const std::size_t>(coords));
    } catch (...) {
        scatter(flat);
        throw;
    }
    scatter(flat);
    for (std::size_t i = params.size(); i-- > 0;) {
        if (out.report.worst_index >= offsets[i]) {
            out.worst_param = params[i].first + "[" + std::to_string(out.report.worst_index - offsets[i]) + "]";
            break;
        }
    }
    return out;
}

namespace {

struct Check {
    const char* module;
    const char* name;
    std::function<CheckResult(const FaultSet&)> run;
};

CheckResult measure(double measured, double tol, std::string detail = {}) {
    CheckResult r;
    r.passed = std::isfinite(measured) && measured <= tol;
    r.measured = measured;
    r.tolerance = tol;
    r.detail = std::move(detail);
    return r;
}

Tensor randn(Shape shape, RandomStream& rng, double sd = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = sd * rng.normal();
    return t;
}

double max_rel_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
    }
    return m;
}

std::string grad_detail(const TapeGradCheck& g) {
    return std::to_string(g.report.checked) + " coordinates; worst " + g.worst_param;
}

ModelConfig small_model(std::size_t width, std::size_t head) {
    ModelConfig c;
    c.vocab = Vocabulary::size();
    c.width = width;
    c.head_size = head;
    c.layers = 2;
    c.kv_heads = 1;
    c.rope.dims_t = head / 2;
    c.rope.dims_h = head / 4;
    c.rope.dims_w = head / 4;
    return c;
}

TrainConfig tiny_train_config() {
    TrainConfig c;
    c.model = small_model(16, 8);
    c.model.layers = 1;
    c.data.count = 8;
    c.batch_size = 2;
    c.steps = 3;
    c.max_height = 128;
    c.max_width = 128;
    return c;
}

// ---------------------------------------------------------------- numerics

CheckResult softmax_sums(const FaultSet&) {
    RandomStream rng(101);
    double worst = 0.0;
    for (int r = 0; r < 1000; ++r) {
        const std::size_t n = 1 + rng.below(32);
        const Tensor s = softmax_last(randn({1, n}, rng, 10.0));
        double sum = 0.0;
        for (double v : s.data()) sum += v;
        worst = std::max(worst, std::abs(sum - 1.0));
    }
    return measure(worst, 1e-12, "1000 rows");
}

CheckResult softmax_shift(const FaultSet&) {
    RandomStream rng(102);
    double worst = 0.0;
    for (int r = 0; r < 1000; ++r) {
        const std::size_t n = 1 + rng.below(32);
        const Tensor x = randn({1, n}, rng, 5.0);
        Tensor y = x;
        const double c = 100.0 * (rng.uniform() - 0.5);
        for (double& v : y.data()) v += c;
        worst = std::max(worst, max_abs_diff(softmax_last(x), softmax_last(y)));
    }
    return measure(worst, 1e-12, "1000 rows, shifts in [-50, 50]");
}

CheckResult philox_kat(const FaultSet&) {
    const auto a = philox4x32_10({0, 0, 0, 0}, {0, 0});
    const auto b = philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
    const RandomStream::Block ea{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u};
    const RandomStream::Block eb{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu};
    double bad = 0;
    for (int i = 0; i < 4; ++i) bad += (a[i] != ea[i]) + (b[i] != eb[i]);
    return measure(bad, 0.0, "mismatched words against the published vectors");
}

CheckResult ops_deterministic(const FaultSet&) {
    RandomStream rng(103);
    const Tensor a = randn({7, 9}, rng), b = randn({9, 5}, rng), g = randn({5}, rng);
    auto run = [&] { return rms_norm(gelu(softmax_last(matmul(a, b))), g, 1e-6); };
    return measure(run() == run() ? 0.0 : 1.0, 0.0, "matmul/softmax/gelu/rms_norm repeated");
}

CheckResult op_gradients(const FaultSet&) {
    RandomStream rng(104);
    Tensor x = randn({3, 5}, rng), w = randn({5, 4}, rng, 0.5), b = randn({4}, rng), gain = randn({4}, rng);
    const Tensor target = randn({3, 4}, rng);
    const std::vector<int> labels{0, 3, 1};
    auto build = [&](ad::Tape& t) {
        auto h = ad::add_bias(t, ad::matmul(t, t.param(x), t.param(w)), t.param(b));
        h = ad::rms_norm(t, ad::gelu(t, h), t.param(gain), 1e-6);
        auto ce = ad::cross_entropy_sum(t, h, labels);
        auto m = ad::mse(t, ad::scale(t, h, 0.7), target);
        const std::pair<ad::Var, double> terms[] = {{ce, 0.3}, {m, 1.0}};
        return ad::weighted_sum(t, terms);
    };
    const auto g = tape_grad_check({{"x", &x}, {"w", &w}, {"b", &b}, {"gain", &gain}}, build, 1e-5, 0, rng);
    return measure(g.report.max_rel_error, 1e-4, grad_detail(g));
}

// ---------------------------------------------------------------- patch_codec

CheckResult token_count_property(const FaultSet&) {
    RandomStream rng(201);
    const CodecParams p = init_codec(8, rng.split("codec"));
    double bad = 0;
    for (int i = 0; i < 30; ++i) {
        const std::size_t h = 32 * (1 + rng.below(6)), w = 32 * (1 + rng.below(6));
        const Tensor img = randn({3, h, w}, rng);
        const PatchGrid g = encode_image(img, p);
        bad += (g.rows * g.cols != h * w / 1024 || g.embeddings.rows() != token_count(h, w));
    }
    return measure(bad, 0.0, "30 random sizes up to 192x192");
}

CheckResult codec_gradients(const FaultSet&) {
    RandomStream rng(202);
    CodecParams p = init_codec(8, rng.split("codec"));
    const Tensor img = randn({3, 32, 64}, rng, 0.5);
    const Tensor target = randn({3, 32, 64}, rng, 0.5);
    NamedParams np;
    CodecParams::visit(p, "", [&](const std::string& n, Tensor& t) { np.emplace_back(n, &t); });
    auto build = [&](ad::Tape& t) {
        auto e = encode_image(t, img, p);
        return ad::mse(t, decode_patches(t, e, 1, 2, p), target);
    };
    const auto g = tape_grad_check(np, build, 1e-5, 24, rng.split("coords"));
    return measure(g.report.max_rel_error, 1e-4, grad_detail(g));
}

CheckResult decode_locality(const FaultSet&) {
    RandomStream rng(203);
    const CodecParams p = init_codec(8, rng.split("codec"));
    PatchGrid grid{2, 3, randn({6, 8}, rng)};
    const Tensor base = decode_patches(grid, p);
    double leak = 0.0;
    for (std::size_t tok = 0; tok < 6; ++tok) {
        PatchGrid g2 = grid;
        for (double& v : g2.embeddings.row(tok)) v += 1.0;
        const Tensor out = decode_patches(g2, p);
        const std::size_t ti = tok / 3, tj = tok % 3;
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t y = 0; y < 64; ++y) {
                for (std::size_t x = 0; x < 96; ++x) {
                    if (y / 32 == ti && x / 32 == tj) continue;
                    const std::size_t i = (c * 64 + y) * 96 + x;
                    leak = std::max(leak, std::abs(out[i] - base[i]));
                }
            }
        }
    }
    return measure(leak, 0.0, "largest change outside the perturbed token's cell");
}

// ---------------------------------------------------------------- rope

PositionTriple random_pos(RandomStream& rng) {
    return {static_cast<std::int64_t>(rng.below(1000)), static_cast<std::int64_t>(rng.below(64)),
            static_cast<std::int64_t>(rng.below(64))};
}

CheckResult rope_relative(const FaultSet& faults) {
    RandomStream rng(301);
    const RopeConfig cfg;
    RopeConfig qcfg = cfg;
    if (faults.rope_theta) qcfg.theta_t *= 1.5;
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const Tensor q = randn({cfg.head_size()}, rng), k = randn({cfg.head_size()}, rng);
        const PositionTriple p1 = random_pos(rng), p2 = random_pos(rng), d = random_pos(rng);
        const double a = dot(apply_rope(q.data(), p1 + d, qcfg), apply_rope(k.data(), p2 + d, cfg));
        const double b = dot(apply_rope(q.data(), p1, qcfg), apply_rope(k.data(), p2, cfg));
        worst = std::max(worst, std::abs(a - b));
    }
    return measure(worst, 1e-10, faults.rope_theta ? "fault injected: query temporal base corrupted" : "1000 draws");
}

CheckResult rope_norm(const FaultSet&) {
    RandomStream rng(302);
    const RopeConfig cfg;
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const Tensor v = randn({cfg.head_size()}, rng);
        const auto r = apply_rope(v.data(), random_pos(rng), cfg);
        worst = std::max(worst, std::abs(l2_norm(r) - l2_norm(v.data())));
    }
    return measure(worst, 1e-12, "1000 draws");
}

CheckResult rope_separable(const FaultSet&) {
    RandomStream rng(303);
    const RopeConfig cfg;
    double bad = 0;
    for (int i = 0; i < 200; ++i) {
        const Tensor v = randn({cfg.head_size()}, rng);
        PositionTriple a = random_pos(rng), b = a;
        b.t = static_cast<std::int64_t>(rng.below(100000));
        const auto ra = apply_rope(v.data(), a, cfg), rb = apply_rope(v.data(), b, cfg);
        for (std::size_t j = cfg.dims_t; j < cfg.head_size(); ++j) bad += ra[j] != rb[j];
        PositionTriple c = a;
        c.h += 5;
        const auto rc = apply_rope(v.data(), c, cfg);
        for (std::size_t j = 0; j < cfg.dims_t; ++j) bad += ra[j] != rc[j];
        for (std::size_t j = cfg.dims_t + cfg.dims_h; j < cfg.head_size(); ++j) bad += ra[j] != rc[j];
    }
    return measure(bad, 0.0, "changed entries outside the moved axis");
}

CheckResult rope_text_image(const FaultSet&) {
    RandomStream rng(304);
    const RopeConfig cfg;
    const auto layout = parse_layout("T3,I2x2,T2,I1x3");
    const auto pos = assign_positions(layout);
    const auto types = layout.token_types();
    double bad = 0;
    std::size_t compared = 0;
    for (std::size_t i = 0; i < pos.size(); ++i) {
        if (types[i] == TokenType::text || pos[i].h != 0 || pos[i].w != 0) continue;
        const Tensor v = randn({cfg.head_size()}, rng);
        const PositionTriple text_pos{pos[i].t, 0, 0};
        bad += apply_rope(v.data(), text_pos, cfg) != apply_rope(v.data(), pos[i], cfg);
        ++compared;
    }
    return measure(compared == 0 ? 1.0 : bad, 0.0, std::to_string(compared) + " image origins compared");
}

CheckResult rope_gradients(const FaultSet&) {
    RandomStream rng(305);
    RopeConfig cfg;
    Tensor x = randn({4, 2 * cfg.head_size()}, rng);
    const Tensor target = randn({4, 2 * cfg.head_size()}, rng);
    const std::vector<PositionTriple> pos{{0, 0, 0}, {3, 1, 2}, {3, 0, 1}, {9, 0, 0}};
    auto build = [&](ad::Tape& t) { return ad::mse(t, rope(t, t.param(x), pos, cfg, 2), target); };
    const auto g = tape_grad_check({{"x", &x}}, build, 1e-5, 0, rng);
    return measure(g.report.max_rel_error, 1e-4, grad_detail(g));
}

// ---------------------------------------------------------------- attention

CheckResult noise_isolation(const FaultSet& faults) {
    RandomStream rng(401);
    double violations = 0;
    std::size_t layouts = 0;
    for (int i = 0; i < 150; ++i) {
        const auto layout = random_layout(rng, 64, true);
        MaskSpec mask = build_mask(layout);
        const auto types = layout.token_types();
        if (faults.noise_leak) {
            const auto clean = std::find_if(types.begin(), types.end(), [](auto t) { return t != TokenType::noise_image; });
            const auto noise = std::find(types.begin(), types.end(), TokenType::noise_image);
            if (clean != types.end() && noise != types.end()) {
                mask.set(static_cast<std::size_t>(clean - types.begin()), static_cast<std::size_t>(noise - types.begin()),
                         true);
            }
        }
        for (std::size_t q = 0; q < types.size(); ++q) {
            if (types[q] == TokenType::noise_image) continue;
            for (std::size_t k = 0; k < types.size(); ++k) violations += types[k] == TokenType::noise_image && mask(q, k);
        }
        ++layouts;
    }
    return measure(violations, 0.0,
                   std::to_string(layouts) + " layouts" + (faults.noise_leak ? "; fault injected: mask leak" : ""));
}

CheckResult plan_containment(const FaultSet&) {
    RandomStream rng(402);
    double violations = 0;
    for (int i = 0; i < 150; ++i) {
        const auto layout = random_layout(rng, 64, false);
        const auto mask = build_mask(layout);
        const auto plan = build_block_plan(layout, 4);
        const auto types = layout.token_types();
        for (const auto& b : plan.blocks) {
            for (std::size_t r = b.row_begin; r < b.row_end; ++r) {
                for (std::size_t k = 0; k < mask.size(); ++k) {
                    if (mask(r, k) && k >= b.key_end) ++violations;
                    if (b.cls == BlockClass::causal_fast_path && types[r] == TokenType::text && k > r && mask(r, k)) {
                        ++violations;
                    }
                }
            }
            if (b.cls == BlockClass::causal_fast_path && b.key_end > b.row_end) ++violations;
        }
    }
    return measure(violations, 0.0, "150 clean layouts, block size 4");
}

CheckResult blocked_equivalence(const FaultSet&) {
    RandomStream rng(403);
    double worst = 0.0;
    for (int i = 0; i < 120; ++i) {
        const auto layout = random_layout(rng, 64, false);
        const std::size_t n = layout.total(), d = 8;
        const Tensor q = randn({n, d}, rng), k = randn({n, d}, rng), v = randn({n, d}, rng);
        const double sc = 1.0 / std::sqrt(static_cast<double>(d));
        const auto plan = build_block_plan(layout, 1 + rng.below(8));
        const auto blocked = attend_blocked(q, k, v, plan, row_cutoffs(layout), sc);
        worst = std::max(worst, max_abs_diff(blocked.out, attend_reference(q, k, v, build_mask(layout), sc)));
    }
    return measure(worst, 1e-10, "120 clean layouts, random block sizes");
}

CheckResult causal_fast_path_text(const FaultSet&) {
    RandomStream rng(404);
    double bad = 0;
    for (int i = 0; i < 100; ++i) {
        SegmentLayout layout;
        layout.segments.push_back(Segment::text(1 + rng.below(64)));
        for (const auto& b : build_block_plan(layout, 1 + rng.below(8)).blocks) {
            bad += b.cls != BlockClass::causal_fast_path;
        }
    }
    return measure(bad, 0.0, "blocks not on the causal fast path over 100 text layouts");
}

CheckResult text_mask_monotone(const FaultSet&) {
    RandomStream rng(405);
    double bad = 0;
    for (int i = 0; i < 150; ++i) {
        const auto layout = random_layout(rng, 64, true);
        const auto mask = build_mask(layout);
        const auto types = layout.token_types();
        std::size_t prev = types.size();
        for (std::size_t r = 0; r < types.size(); ++r) {
            if (types[r] != TokenType::text) continue;
            if (prev != types.size()) {
                for (std::size_t k = 0; k < types.size(); ++k) {
                    if (types[k] != TokenType::noise_image && mask(prev, k) && !mask(r, k)) ++bad;
                }
            }
            prev = r;
        }
    }
    return measure(bad, 0.0, "150 layouts with noise");
}

CheckResult attention_gradients(const FaultSet&) {
    RandomStream rng(406);
    const auto layout = parse_layout("T3,I1x2,N1x2p,I1x2,T1");
    const std::size_t n = layout.total(), d = 4;
    const auto mask = build_mask(layout);
    Tensor q = randn({n, 2 * d}, rng), k = randn({n, d}, rng), v = randn({n, d}, rng);
    const Tensor target = randn({n, 2 * d}, rng);
    auto build = [&](ad::Tape& t) {
        return ad::mse(t, masked_attention(t, t.param(q), t.param(k), t.param(v), mask, 2, 1), target);
    };
    const auto g = tape_grad_check({{"q", &q}, {"k", &k}, {"v", &v}}, build, 1e-5, 0, rng);
    return measure(g.report.max_rel_error, 1e-4, grad_detail(g));
}

// ---------------------------------------------------------------- mot_core

struct MotFixture {
    ModelParams params;
    Tensor image;
    Tensor noise;
    std::vector<int> caption;

    MotFixture() {
        RandomStream rng(501);
        params = init_model(small_model(16, 8), rng.split("model"));
        image = randn({3, 32, 64}, rng, 0.5);
        noise = randn({3, 32, 64}, rng);
        caption = {Vocabulary::bos, 5, 10, 13, Vocabulary::eos};
    }

    TokenSequence clean_sequence() const {
        return {{TextItem{caption}, MarkerItem{Marker::image_open}, CleanImageItem{image},
                 MarkerItem{Marker::image_close}, TextItem{{4, 7}}}};
    }
    TokenSequence noisy_sequence(double t, double sigma_bar) const {
        return {{TextItem{caption}, MarkerItem{Marker::image_open}, NoiseImageItem{noise, t, sigma_bar, false}}};
    }
};

void scramble_generation(ModelParams& p, double value) {
    for (auto& b : p.blocks) {
        StreamParams::visit(b.gen, "", [&](const std::string&, Tensor& t) {
            for (double& v : t.data()) v = value;
        });
    }
    for (double& v : p.gen_final_norm.data()) v = value;
}

CheckResult gen_weights_isolated(const FaultSet&) {
    MotFixture f;
    const auto before = model_forward(f.clean_sequence(), f.params);
    ModelParams zeroed = f.params;
    scramble_generation(zeroed, 0.0);
    const auto after = model_forward(f.clean_sequence(), zeroed);
    return measure(before.text_logits == after.text_logits ? 0.0 : max_abs_diff(before.text_logits, after.text_logits),
                   0.0, "text and clean-image sequence with generation weights zeroed");
}

CheckResult gen_weights_pre_noise(const FaultSet&) {
    MotFixture f;
    const auto before = model_forward(f.noisy_sequence(0.4, 0.5), f.params);
    ModelParams changed = f.params;
    scramble_generation(changed, 0.37);
    const auto after = model_forward(f.noisy_sequence(0.4, 0.5), changed);
    double diff = 0.0;
    for (std::size_t r = 0; r < before.text_logits.rows(); ++r) {
        for (std::size_t c = 0; c < before.text_logits.cols(); ++c) {
            diff = std::max(diff, std::abs(before.text_logits.at(r, c) - after.text_logits.at(r, c)));
        }
    }
    const bool bitwise = before.text_logits == after.text_logits;
    return measure(bitwise ? 0.0 : std::max(diff, 1e-300), 0.0, "text logits before the noise block, generation weights replaced");
}

CheckResult conditioning_text_invariant(const FaultSet&) {
    MotFixture f;
    const auto a = model_forward(f.noisy_sequence(0.2, 0.25), f.params);
    const auto b = model_forward(f.noisy_sequence(0.8, 1.0), f.params);
    return measure(a.text_logits == b.text_logits ? 0.0 : std::max(max_abs_diff(a.text_logits, b.text_logits), 1e-300),
                   0.0, "t 0.2 -> 0.8, sigma_bar 0.25 -> 1.0");
}

CheckResult conditioning_changes_prediction(const FaultSet&) {
    MotFixture f;
    const auto a = model_forward(f.noisy_sequence(0.2, 0.25), f.params);
    const auto b = model_forward(f.noisy_sequence(0.8, 0.25), f.params);
    const auto c = model_forward(f.noisy_sequence(0.2, 1.0), f.params);
    const double dt = max_abs_diff(a.x_hat[0], b.x_hat[0]);
    const double ds = max_abs_diff(a.x_hat[0], c.x_hat[0]);
    const double smallest = std::min(dt, ds);
    CheckResult r;
    r.passed = smallest > 0.0;
    r.measured = smallest;
    r.tolerance = 0.0;
    r.detail = "smallest change of x_hat when t or sigma_bar moves; must be nonzero";
    return r;
}

CheckResult model_gradients(const FaultSet&) {
    RandomStream rng(502);
    ModelParams p = init_model(small_model(8, 8), rng.split("model"));
    auto data = make_dataset({3, 1, 64, 64});
    const Tensor eps = standard_normal(data[0].image.shape(), rng);
    const auto ex = build_training_example(data[0], {true, true}, 0.37, eps, 1.0, 0.25);
    const auto g = model_grad_check(p, ex, 0.1 / static_cast<double>(ex.targets.size()), 1.0, 1e-5, 6, rng.split("coords"));
    return measure(g.report.max_rel_error, 1e-4, "width 8, 2 layers; " + grad_detail(g));
}

// ---------------------------------------------------------------- flow_matching

CheckResult interpolant_endpoints(const FaultSet&) {
    RandomStream rng(601);
    double bad = 0;
    for (int i = 0; i < 200; ++i) {
        const Tensor x = randn({3, 4, 4}, rng), e = randn({3, 4, 4}, rng);
        const double s = 0.5 + 8.0 * rng.uniform();
        bad += interpolate(x, e, 1.0, s) != x;
        const Tensor z0 = interpolate(x, e, 0.0, s);
        for (std::size_t j = 0; j < z0.size(); ++j) bad += z0[j] != s * e[j];
    }
    return measure(bad, 0.0, "200 draws, exact comparison");
}

CheckResult velocity_time_invariant(const FaultSet&) {
    RandomStream rng(602);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
        const Tensor x = randn({3, 4, 4}, rng), e = randn({3, 4, 4}, rng);
        const double s = 0.5 + 8.0 * rng.uniform();
        const Tensor ref = target_velocity(x, interpolate(x, e, 0.05, s), 0.05);
        for (int k = 2; k <= 19; ++k) {
            const double t = 0.05 * k;
            worst = std::max(worst, max_abs_diff(target_velocity(x, interpolate(x, e, t, s), t), ref));
        }
    }
    return measure(worst, 1e-9, "t in {0.05, ..., 0.95}");
}

CheckResult perfect_prediction(const FaultSet&) {
    RandomStream rng(603);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Tensor x = randn({3, 4, 4}, rng), e = randn({3, 4, 4}, rng);
        const double t = (1.0 - kTimeClamp) * rng.uniform();
        const Tensor z = interpolate(x, e, t, 2.0);
        worst = std::max(worst, gen_loss(xpred_to_velocity(x, z, t), target_velocity(x, z, t)));
    }
    return measure(worst, 0.0, "x_hat == x over 100 random t");
}

CheckResult noise_scale_law(const FaultSet&) {
    RandomStream rng(604);
    const NoiseScaleConfig cfg;
    double bad = 0;
    bad += noise_scale(256, 256, cfg) != 1.0;
    bad += noise_scale(2048, 2048, cfg) != 8.0;
    for (int i = 0; i < 50; ++i) {
        const std::size_t h = 32 * (1 + rng.below(64)), w = 32 * (1 + rng.below(64));
        bad += noise_scale(2 * h, 2 * w, cfg) != 2.0 * noise_scale(h, w, cfg);
        bad += noise_scale(h, w + 32, cfg) <= noise_scale(h, w, cfg);
    }
    return measure(bad, 0.0, "endpoints, square-root law and monotonicity over 50 sizes");
}

CheckResult text_loss_shift(const FaultSet&) {
    RandomStream rng(605);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        const Tensor logits = randn({3, 11}, rng, 3.0);
        const std::vector<int> targets{static_cast<int>(rng.below(11)), static_cast<int>(rng.below(11)),
                                       static_cast<int>(rng.below(11))};
        Tensor shifted = logits;
        const double c = 40.0 * (rng.uniform() - 0.5);
        for (double& v : shifted.data()) v += c;
        worst = std::max(worst, std::abs(text_loss(logits, targets) - text_loss(shifted, targets)));
    }
    return measure(worst, 1e-12, "200 random logit tables");
}

// ---------------------------------------------------------------- sampler

class ToyPredictor final : public XPredictor {
public:
    Tensor predict(const GenerationContext&, ConditionFlags flags, const Tensor& z, double t,
                   double sigma_bar) const override {
        Tensor x = z;
        const double bias = (flags.text_present ? 0.3 : 0.0) + (flags.image_context_present ? 0.1 : 0.0);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = std::tanh(0.5 * z[i] + bias + 0.2 * t + 0.1 * sigma_bar) + 0.01 * static_cast<double>(i % 7);
        }
        return x;
    }
};

CheckResult guide_affine(const FaultSet&) {
    RandomStream rng(701);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        GuidanceTriple g{randn({3, 4, 4}, rng), randn({3, 4, 4}, rng), randn({3, 4, 4}, rng)};
        const double a = 4.0 * (rng.uniform() - 0.5);
        const double gamma = 1.0 + 6.0 * rng.uniform(), gamma_img = 0.5 + 2.0 * rng.uniform();
        GuidanceTriple s{scale(g.full, a), scale(g.img, a), scale(g.unc, a)};
        worst = std::max(worst, max_rel_diff(guide(s, gamma, gamma_img), scale(guide(g, gamma, gamma_img), a)));
    }
    return measure(worst, 1e-12, "200 random fields and scalars");
}

CheckResult unguided_matches_conditional(const FaultSet&) {
    const ToyPredictor model;
    GenerationContext ctx;
    ctx.items.push_back(TextItem{{1, 4, 10, 13, 2}});
    const NoiseScaleConfig noise;
    SamplerConfig cfg;
    cfg.steps = 12;
    cfg.gamma = 1.0;
    cfg.gamma_img = 1.0;
    cfg.renorm = true;
    const auto guided = sample(model, ctx, 32, 64, cfg, noise, RandomStream(9));

    RandomStream rng(9);
    const double sigma_bar = normalized_noise_scale(noise_scale(32, 64, noise), noise);
    Tensor z = init_noise(32, 64, rng, noise);
    const auto times = shifted_schedule(cfg.steps, cfg.shift);
    for (std::size_t k = 0; k < cfg.steps; ++k) {
        Tensor x = model.predict(ctx, {true, true}, z, times[k], sigma_bar);
        if (k + 1 == cfg.steps) {
            z = std::move(x);
            break;
        }
        z = euler_step(z, xpred_to_velocity(x, z, times[k]), times[k], times[k + 1]);
    }
    for (double& v : z.data()) v = std::clamp(v, -1.0, 1.0);
    return measure(guided.image == z ? 0.0 : std::max(max_abs_diff(guided.image, z), 1e-300), 0.0,
                   "gamma = gamma_img = 1 with renorm on vs a plain conditional Euler loop");
}

CheckResult final_step_paths(const FaultSet&) {
    RandomStream rng(703);
    const auto times = shifted_schedule(32, 3.0);
    const double t = times[times.size() - 2];
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Tensor z = randn({3, 4, 4}, rng, 2.0), x = randn({3, 4, 4}, rng);
        worst = std::max(worst, max_abs_diff(euler_step(z, xpred_to_velocity(x, z, t), t, 1.0), x));
    }
    return measure(worst, 1e-12, "last grid point t = " + std::to_string(t));
}

CheckResult renorm_norm(const FaultSet&) {
    RandomStream rng(704);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        const Tensor g = randn({3, 8, 8}, rng, 5.0), ref = randn({3, 8, 8}, rng, 0.3);
        const auto r = cfg_renorm(g, ref);
        const double nr = l2_norm(ref.data());
        worst = std::max(worst, std::abs(l2_norm(r.velocity.data()) - nr) / nr);
    }
    return measure(worst, 1e-12, "relative norm error over 200 fields");
}

// ---------------------------------------------------------------- rl_rewards

TokenMultiset random_multiset(RandomStream& rng) {
    static const char* words[] = {"a", "b", "c", "d", "e", "f"};
    std::string s;
    const std::size_t n = rng.below(8);
    for (std::size_t i = 0; i < n; ++i) s += std::string(words[rng.below(6)]) + " ";
    return tokenize_multiset(s);
}

CheckResult ocr_iou_properties(const FaultSet&) {
    RandomStream rng(801);
    double bad = 0;
    for (int i = 0; i < 500; ++i) {
        const auto a = random_multiset(rng), b = random_multiset(rng);
        const double ab = ocr_iou(a, b);
        bad += ab != ocr_iou(b, a);
        bad += ocr_iou(a, a) != 1.0;
        bad += !(ab >= 0.0 && ab <= 1.0);
    }
    return measure(bad, 0.0, "symmetry, identity and bounds over 500 pairs");
}

CheckResult warmup_gate_properties(const FaultSet&) {
    const auto cands = default_resolution_candidates();
    const double warm = 10.0;
    double worst_sum = 0.0;
    double bad = 0;
    std::vector<double> prev_factor(cands.size(), -1.0);
    for (int k = 0; k <= 60; ++k) {
        const double e = 0.25 * k;
        const auto p = warmup_gate(cands, e, warm);
        double s = 0.0;
        for (double v : p) s += v;
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
        for (std::size_t i = 0; i < cands.size(); ++i) {
            const double f = warmup_gate_factor(e, warm, cands[i].difficulty, 0.3);
            bad += f < prev_factor[i];
            prev_factor[i] = f;
            if (e >= warm) bad += p[i] != cands[i].base_prob;
        }
    }
    CheckResult r = measure(worst_sum, 1e-12, "epochs 0..15 by 0.25, E_warm 10");
    if (bad > 0) {
        r.passed = false;
        r.detail += "; " + std::to_string(static_cast<int>(bad)) + " monotonicity or base-probability violations";
    }
    return r;
}

CheckResult style_map_increasing(const FaultSet&) {
    double bad = 0;
    for (int s = 1; s < 4; ++s) bad += !(style_score_map(s) < style_score_map(s + 1));
    bad += style_score_map(1) != 0.0;
    bad += style_score_map(4) != 1.0;
    return measure(bad, 0.0, "scores 1..4");
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "unimot-verify-XXXXXX").string();
        require(::mkdtemp(tmpl.data()) != nullptr, ErrorCode::io, "cannot create a temporary directory");
        path = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

CheckResult stub_scorer_deterministic(const FaultSet&) {
    TempDir dir;
    RandomStream rng(804);
    const auto img = dir.path / "a.ppm";
    Tensor pixels = randn({3, 32, 32}, rng, 0.4);
    for (double& v : pixels.data()) v = std::clamp(v, -1.0, 1.0);
    write_ppm(img, pixels);
    const StubScorer scorer;
    double bad = 0;
    for (auto kind : {ScorerKind::style, ScorerKind::aesthetic}) {
        const ScoreRequest req{img, "a red square", kind};
        const auto a = scorer.score(req), b = scorer.score(req);
        bad += !(a.valid && b.valid && a.score == b.score);
        if (kind == ScorerKind::style) bad += !(a.score == 1 || a.score == 2 || a.score == 3 || a.score == 4);
        else bad += !(a.score >= 0.0 && a.score < 1.0);
    }
    bad += scorer.score({dir.path / "missing.ppm", "x", ScorerKind::style}).valid;
    return measure(bad, 0.0, "repeat scores, score ranges and the missing-image case");
}

// ---------------------------------------------------------------- harness

CheckResult ema_geometric(const FaultSet&) {
    Tensor shadow({4}, 0.0);
    const Tensor p({4}, 1.7);
    const double ratio = 0.9;
    double worst = 0.0;
    for (int k = 1; k <= 50; ++k) {
        ema_update(shadow, p, ratio);
        const double expect = 1.7 * (1.0 - std::pow(ratio, k));
        for (double v : shadow.data()) worst = std::max(worst, std::abs(v - expect));
    }
    return measure(worst, 1e-12, "50 steps of constant parameters from zero");
}

CheckResult clip_norm(const FaultSet&) {
    std::vector<Tensor> g{Tensor::vector({1.2, 0.0}), Tensor::vector({1.6})};
    const double before = clip_grad_norm(g, 1.0);
    double err = std::abs(before - 2.0) + std::abs(global_norm(g) - 1.0);
    std::vector<Tensor> small{Tensor::vector({0.3, 0.4})};
    const auto copy = small;
    clip_grad_norm(small, 1.0);
    err += small == copy ? 0.0 : 1.0;
    std::vector<Tensor> zeros{Tensor({3}, 0.0)};
    clip_grad_norm(zeros, 1.0);
    err += zeros[0] == Tensor({3}, 0.0) ? 0.0 : 1.0;
    return measure(err, 1e-12, "norm 2 -> 1, norm 0.5 unchanged, zeros unchanged");
}

CheckResult checkpoint_round_trip(const FaultSet&) {
    const TrainConfig cfg = tiny_train_config();
    const auto data = make_dataset(cfg.data);
    const Checkpoint ck = train(cfg, data);
    const auto bytes = serialize_checkpoint(ck);
    const Checkpoint back = deserialize_checkpoint(bytes);
    double bad = serialize_checkpoint(back) == bytes ? 0.0 : 1.0;
    const TokenSequence seq{{TextItem{data[0].caption}, MarkerItem{Marker::image_open},
                             NoiseImageItem{data[1].image, 0.3, 0.5, false}}};
    const auto a = model_forward(seq, ck.params), b = model_forward(seq, back.params);
    bad += !(a.text_logits == b.text_logits && a.x_hat == b.x_hat);
    bad += !(back.step == ck.step && back.rng == ck.rng);
    return measure(bad, 0.0, std::to_string(bytes.size()) + " bytes; forward compared bitwise");
}

CheckResult checkpoint_corruption(const FaultSet&) {
    const Checkpoint ck = initial_checkpoint(tiny_train_config());
    const auto bytes = serialize_checkpoint(ck);
    double bad = 0;
    auto rejected = [&](std::vector<unsigned char> b, ErrorCode want) {
        try {
            deserialize_checkpoint(b);
        } catch (const Error& e) {
            return e.code() == want;
        }
        return false;
    };
    auto flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x10;
    bad += !rejected(flipped, ErrorCode::checksum);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 100);
    bad += !rejected(truncated, ErrorCode::checksum);
    auto versioned = bytes;
    versioned[8] = 2;
    bad += !rejected(versioned, ErrorCode::version);
    return measure(bad, 0.0, "flipped byte, truncation, version bump");
}

CheckResult config_round_trip(const FaultSet&) {
    TrainConfig cfg = tiny_train_config();
    cfg.optimizer.lr = 3.0e-4;
    cfg.t_mu = -0.123456789012345;
    const std::string text = format_config(cfg);
    return measure(format_config(parse_config(text)) == text ? 0.0 : 1.0, 0.0,
                   std::to_string(config_schema().size()) + " keys");
}

CheckResult dataset_properties(const FaultSet&) {
    const SyntheticSpec spec{11, 24, 64, 96};
    const auto a = make_dataset(spec), b = make_dataset(spec);
    double bad = dataset_hash(a) == dataset_hash(b) ? 0.0 : 1.0;
    for (const auto& ex : a) {
        const auto [r, c] = position_center(ex.position, spec.height, spec.width);
        const auto rgb = Vocabulary::rgb(ex.color);
        for (std::size_t ch = 0; ch < 3; ++ch) bad += ex.image[(ch * spec.height + r) * spec.width + c] != rgb[ch];
    }
    return measure(bad, 0.0, "rebuild hash and center-pixel color probe over 24 samples");
}

CheckResult training_determinism(const FaultSet&) {
    const TrainConfig cfg = tiny_train_config();
    const auto data = make_dataset(cfg.data);
    std::string log_a, log_b;
    bool finite = true;
    const auto a = train(cfg, data, [&](const StepMetrics& m) {
        log_a += format_metrics(m) + "\n";
        finite = finite && std::isfinite(m.total);
    });
    const auto b = train(cfg, data, [&](const StepMetrics& m) { log_b += format_metrics(m) + "\n"; });
    double bad = serialize_checkpoint(a) == serialize_checkpoint(b) ? 0.0 : 1.0;
    bad += log_a == log_b ? 0.0 : 1.0;
    bad += finite ? 0.0 : 1.0;
    TrainConfig none = cfg;
    none.steps = 0;
    bad += serialize_checkpoint(train(none, data)) == serialize_checkpoint(initial_checkpoint(none)) ? 0.0 : 1.0;
    return measure(bad, 0.0, "two seeded runs of 3 steps; zero-step run equals initialization");
}

const std::vector<Check>& checks() {
    static const std::vector<Check> all = {
        {"numerics", "softmax_rows_sum_to_one", softmax_sums},
        {"numerics", "softmax_shift_invariance", softmax_shift},
        {"numerics", "philox_known_answers", philox_kat},
        {"numerics", "ops_bitwise_deterministic", ops_deterministic},
        {"numerics", "op_gradients", op_gradients},
        {"patch_codec", "token_count", token_count_property},
        {"patch_codec", "codec_gradients", codec_gradients},
        {"patch_codec", "decode_locality", decode_locality},
        {"rope", "relative_position", rope_relative},
        {"rope", "norm_preservation", rope_norm},
        {"rope", "axis_separability", rope_separable},
        {"rope", "text_image_consistency", rope_text_image},
        {"rope", "rope_gradients", rope_gradients},
        {"attention", "noise_isolation", noise_isolation},
        {"attention", "plan_containment", plan_containment},
        {"attention", "blocked_matches_reference", blocked_equivalence},
        {"attention", "text_layouts_causal_fast_path", causal_fast_path_text},
        {"attention", "text_mask_monotonicity", text_mask_monotone},
        {"attention", "masked_attention_gradients", attention_gradients},
        {"mot_core", "generation_weights_isolated", gen_weights_isolated},
        {"mot_core", "pre_noise_logits_ignore_generation_weights", gen_weights_pre_noise},
        {"mot_core", "pre_noise_logits_ignore_conditioning", conditioning_text_invariant},
        {"mot_core", "conditioning_changes_prediction", conditioning_changes_prediction},
        {"mot_core", "model_gradients", model_gradients},
        {"flow_matching", "interpolant_endpoints", interpolant_endpoints},
        {"flow_matching", "velocity_time_invariance", velocity_time_invariant},
        {"flow_matching", "perfect_prediction_zero_loss", perfect_prediction},
        {"flow_matching", "noise_scale_sqrt_law", noise_scale_law},
        {"flow_matching", "text_loss_shift_invariance", text_loss_shift},
        {"sampler", "guide_affine", guide_affine},
        {"sampler", "unguided_matches_conditional", unguided_matches_conditional},
        {"sampler", "final_step_paths_agree", final_step_paths},
        {"sampler", "renorm_matches_reference_norm", renorm_norm},
        {"rl_rewards", "ocr_iou_properties", ocr_iou_properties},
        {"rl_rewards", "warmup_gate_properties", warmup_gate_properties},
        {"rl_rewards", "style_map_increasing", style_map_increasing},
        {"rl_rewards", "stub_scorer_deterministic", stub_scorer_deterministic},
        {"harness", "ema_geometric_series", ema_geometric},
        {"harness", "clip_grad_norm", clip_norm},
        {"harness", "checkpoint_round_trip", checkpoint_round_trip},
        {"harness", "checkpoint_rejects_corruption", checkpoint_corruption},
        {"harness", "config_round_trip", config_round_trip},
        {"harness", "dataset_deterministic_and_probed", dataset_properties},
        {"harness", "training_deterministic", training_determinism},
    };
    return all;
}

}  // namespace

std::vector<std::string> suite_modules() {
    std::vector<std::string> m;
    for (const auto& c : checks()) {
        if (m.empty() || m.back() != c.module) m.emplace_back(c.module);
    }
    return m;
}

std::vector<CheckResult> run_invariant_suite(std::string_view filter, const FaultSet& faults, const CheckSink& sink) {
    if (!filter.empty()) {
        const auto mods = suite_modules();
        require(std::find(mods.begin(), mods.end(), filter) != mods.end(), ErrorCode::invalid_argument,
                "unknown module '" + std::string(filter) + "'");
    }
    std::vector<CheckResult> out;
    for (const auto& c : checks()) {
        if (!filter.empty() && filter != c.module) continue;
        CheckResult r;
        try {
            r = c.run(faults);
        } catch (const std::exception& e) {
            r = CheckResult{};
            r.passed = false;
            r.measured = std::numeric_limits<double>::quiet_NaN();
            r.detail = std::string("exception: ") + e.what();
        }
        r.module = c.module;
        r.name = c.name;
        if (sink) sink(r);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace unimot
