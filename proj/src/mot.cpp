#include "unimot/mot.hpp"

#include <cmath>

#include "unimot/error.hpp"
#include "unimot/ops.hpp"

namespace unimot {

void ModelConfig::validate() const {
    require(vocab > 0 && width > 0 && layers > 0, ErrorCode::invalid_argument, "model dims must be positive");
    require(head_size > 0 && width % head_size == 0, ErrorCode::invalid_argument,
            "width " + std::to_string(width) + " is not a multiple of head size " + std::to_string(head_size));
    require(kv_heads > 0 && q_heads() % kv_heads == 0, ErrorCode::invalid_argument,
            "query heads must be a multiple of kv heads");
    require(width % 4 == 0, ErrorCode::invalid_argument, "width must be a multiple of 4");
    rope.validate();
    require(rope.head_size() == head_size, ErrorCode::invalid_argument, "rope T/H/W dims must sum to the head size");
    require(norm_eps > 0.0, ErrorCode::invalid_argument, "norm eps must be positive");
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
}

namespace {

Tensor normal_tensor(Shape shape, double std, RandomStream& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = std * rng.normal();
    return t;
}

double fan_in_std(std::size_t fan_in) {
    return 1.0 / std::sqrt(static_cast<double>(fan_in));
}

StreamParams init_stream(const ModelConfig& cfg, RandomStream rng) {
    const std::size_t w = cfg.width, hd = cfg.head_size;
    const std::size_t ff = cfg.ffn_mult * w;
    const double out_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.layers));
    StreamParams s;
    s.attn_norm = Tensor({w}, 1.0);
    s.wq = normal_tensor({w, cfg.q_heads() * hd}, fan_in_std(w), rng);
    s.wk = normal_tensor({w, cfg.kv_heads * hd}, fan_in_std(w), rng);
    s.wv = normal_tensor({w, cfg.kv_heads * hd}, fan_in_std(w), rng);
    s.wo = normal_tensor({cfg.q_heads() * hd, w}, fan_in_std(cfg.q_heads() * hd) * out_scale, rng);
    s.ffn_norm = Tensor({w}, 1.0);
    s.w1 = normal_tensor({w, ff}, fan_in_std(w), rng);
    s.w2 = normal_tensor({ff, w}, fan_in_std(ff) * out_scale, rng);
    return s;
}

EmbedderParams init_embedder(std::size_t w, RandomStream rng) {
    EmbedderParams e;
    e.w1 = normal_tensor({w, w}, fan_in_std(w), rng);
    e.b1 = Tensor({w});
    e.w2 = normal_tensor({w, w}, fan_in_std(w), rng);
    e.b2 = Tensor({w});
    return e;
}

}  // namespace

ModelParams init_model(const ModelConfig& cfg, RandomStream rng) {
    cfg.validate();
    ModelParams p;
    p.cfg = cfg;
    auto embed_rng = rng.split("tok_embed");
    p.tok_embed = normal_tensor({cfg.vocab, cfg.width}, 1.0, embed_rng);
    p.codec = init_codec(cfg.width, rng.split("codec"));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        auto lr = rng.split(l + 1);
        p.blocks.push_back({init_stream(cfg, lr.split("und")), init_stream(cfg, lr.split("gen"))});
    }
    p.und_final_norm = Tensor({cfg.width}, 1.0);
    p.gen_final_norm = Tensor({cfg.width}, 1.0);
    auto head_rng = rng.split("text_head");
    p.text_head = normal_tensor({cfg.width, cfg.vocab}, 0.02, head_rng);
    p.t_embed = init_embedder(cfg.width, rng.split("t_embed"));
    p.ns_embed = init_embedder(cfg.width, rng.split("ns_embed"));
    return p;
}

std::vector<Stream> route(std::span<const TokenType> types) {
    std::vector<Stream> s;
    s.reserve(types.size());
    for (auto t : types) s.push_back(t == TokenType::noise_image ? Stream::gen : Stream::und);
    return s;
}

Tensor scalar_features(double v, std::size_t dim) {
    require(dim % 2 == 0 && dim > 0, ErrorCode::invalid_argument, "feature width must be even");
    const std::size_t half = dim / 2;
    Tensor f({dim});
    for (std::size_t i = 0; i < half; ++i) {
        const double omega = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
        f[i] = std::sin(1000.0 * v * omega);
        f[half + i] = std::cos(1000.0 * v * omega);
    }
    return f;
}

namespace {

ad::Var embed(ad::Tape& tape, double v, const EmbedderParams& p) {
    const std::size_t w = p.b2.size();
    auto x = tape.constant(scalar_features(v, w).reshaped({1, w}));
    auto h = ad::add_bias(tape, ad::matmul(tape, x, tape.param(p.w1)), tape.param(p.b1));
    h = ad::gelu(tape, h);
    h = ad::add_bias(tape, ad::matmul(tape, h, tape.param(p.w2)), tape.param(p.b2));
    return ad::reshape(tape, h, {w});
}

void check_unit(double v, const char* what) {
    require(v >= 0.0 && v <= 1.0, ErrorCode::invalid_argument,
            std::string(what) + " = " + std::to_string(v) + " is outside [0, 1]");
}

}  // namespace

ad::Var timestep_embed(ad::Tape& tape, double t, const EmbedderParams& p) {
    check_unit(t, "t");
    return embed(tape, t, p);
}

ad::Var ns_embed(ad::Tape& tape, double sigma_bar, const EmbedderParams& p) {
    check_unit(sigma_bar, "sigma_bar");
    return embed(tape, sigma_bar, p);
}

Tensor timestep_embed(double t, const EmbedderParams& p) {
    ad::Tape tape;
    return tape.value(timestep_embed(tape, t, p));
}

Tensor ns_embed(double sigma_bar, const EmbedderParams& p) {
    ad::Tape tape;
    return tape.value(ns_embed(tape, sigma_bar, p));
}

Tensor embed_derivative(double v, const EmbedderParams& p) {
    const std::size_t w = p.b2.size();
    const std::size_t half = w / 2;
    Tensor feat = scalar_features(v, w);
    Tensor dfeat({w});
    for (std::size_t i = 0; i < half; ++i) {
        const double omega = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
        dfeat[i] = 1000.0 * omega * feat[half + i];
        dfeat[half + i] = -1000.0 * omega * feat[i];
    }
    Tensor pre = add(matmul(feat.reshaped({1, w}), p.w1), p.b1.reshaped({1, w}));
    Tensor dpre = matmul(dfeat.reshaped({1, w}), p.w1);
    for (std::size_t j = 0; j < w; ++j) dpre[j] *= gelu_grad(pre[j]);
    return matmul(dpre, p.w2).reshaped({w});
}

Tensor conditioning(double t, double sigma_bar, const ModelParams& params) {
    return add(timestep_embed(t, params.t_embed), ns_embed(sigma_bar, params.ns_embed));
}

SegmentLayout TokenSequence::layout() const {
    SegmentLayout layout;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& item = items[i];
        if (const auto* t = std::get_if<TextItem>(&item)) {
            layout.segments.push_back(Segment::text(t->ids.size()));
        } else if (std::holds_alternative<MarkerItem>(item)) {
            layout.segments.push_back(Segment::text(1));
        } else if (const auto* c = std::get_if<CleanImageItem>(&item)) {
            check_image(c->image);
            layout.segments.push_back(Segment::clean(c->image.dim(1) / kPatch, c->image.dim(2) / kPatch));
        } else {
            const auto& n = std::get<NoiseImageItem>(item);
            check_image(n.state);
            layout.segments.push_back(Segment::noise(n.state.dim(1) / kPatch, n.state.dim(2) / kPatch, n.paired));
        }
    }
    return layout;
}

void validate_sequence(const TokenSequence& seq, const ModelConfig& cfg) {
    require(!seq.items.empty(), ErrorCode::invalid_argument, "sequence is empty");
    for (std::size_t i = 0; i < seq.items.size(); ++i) {
        const std::string where = "sequence item " + std::to_string(i) + ": ";
        const auto& item = seq.items[i];
        if (const auto* t = std::get_if<TextItem>(&item)) {
            require(!t->ids.empty(), ErrorCode::invalid_argument, where + "empty text run");
            for (int id : t->ids) {
                require(id >= 0 && static_cast<std::size_t>(id) < cfg.vocab, ErrorCode::invalid_argument,
                        where + "token id " + std::to_string(id) + " outside vocab of " + std::to_string(cfg.vocab));
            }
        } else if (const auto* n = std::get_if<NoiseImageItem>(&item)) {
            require(n->t >= 0.0 && n->t <= 1.0, ErrorCode::invalid_argument, where + "noise time outside [0, 1]");
            require(n->sigma_bar >= 0.0 && n->sigma_bar <= 1.0, ErrorCode::invalid_argument,
                    where + "noise scale outside [0, 1]");
        }
    }
    try {
        seq.layout().validate();
    } catch (const Error& e) {
        fail(ErrorCode::invalid_argument, std::string("malformed sequence: ") + e.what());
    }
}

ad::Var mot_block_forward(ad::Tape& tape, ad::Var hidden, std::span<const TokenType> types,
                          std::span<const PositionTriple> positions, const MaskSpec& mask, const MoTBlock& block,
                          const ModelConfig& cfg) {
    const std::size_t n = types.size();
    require(tape.value(hidden).rows() == n && positions.size() == n && mask.size() == n, ErrorCode::shape_mismatch,
            "mot_block_forward: hidden, types, positions and mask disagree on token count");
    const auto streams = route(types);
    std::vector<std::size_t> idx[2];
    for (std::size_t i = 0; i < n; ++i) idx[streams[i] == Stream::gen ? 1 : 0].push_back(i);
    const StreamParams* sp[2] = {&block.und, &block.gen};

    // Applies `f(rows, stream params)` per non-empty stream and reassembles full rows.
    auto routed = [&](ad::Var x, auto&& f) {
        std::vector<std::pair<ad::Var, std::vector<std::size_t>>> parts;
        for (int s = 0; s < 2; ++s) {
            if (idx[s].empty()) continue;
            ad::Var rows = idx[s].size() == n ? x : ad::gather_rows(tape, x, idx[s]);
            parts.emplace_back(f(rows, *sp[s]), idx[s]);
        }
        if (parts.size() == 1 && parts[0].second.size() == n) return parts[0].first;
        return ad::merge_rows(tape, n, parts);
    };

    // Shared pre-norm per stream, then the three routed projections.
    std::vector<std::pair<ad::Var, std::vector<std::size_t>>> qp, kp, vp;
    for (int s = 0; s < 2; ++s) {
        if (idx[s].empty()) continue;
        ad::Var rows = idx[s].size() == n ? hidden : ad::gather_rows(tape, hidden, idx[s]);
        auto normed = ad::rms_norm(tape, rows, tape.param(sp[s]->attn_norm), cfg.norm_eps);
        qp.emplace_back(ad::matmul(tape, normed, tape.param(sp[s]->wq)), idx[s]);
        kp.emplace_back(ad::matmul(tape, normed, tape.param(sp[s]->wk)), idx[s]);
        vp.emplace_back(ad::matmul(tape, normed, tape.param(sp[s]->wv)), idx[s]);
    }
    auto merged = [&](const std::vector<std::pair<ad::Var, std::vector<std::size_t>>>& parts) {
        return parts.size() == 1 && parts[0].second.size() == n ? parts[0].first : ad::merge_rows(tape, n, parts);
    };
    auto q = rope(tape, merged(qp), positions, cfg.rope, cfg.q_heads());
    auto k = rope(tape, merged(kp), positions, cfg.rope, cfg.kv_heads);
    auto v = merged(vp);
    auto attn = masked_attention(tape, q, k, v, mask, cfg.q_heads(), cfg.kv_heads);
    auto o = routed(attn, [&](ad::Var rows, const StreamParams& p) { return ad::matmul(tape, rows, tape.param(p.wo)); });
    auto h = ad::add(tape, hidden, o);
    auto f = routed(h, [&](ad::Var rows, const StreamParams& p) {
        auto x = ad::rms_norm(tape, rows, tape.param(p.ffn_norm), cfg.norm_eps);
        x = ad::gelu(tape, ad::matmul(tape, x, tape.param(p.w1)));
        return ad::matmul(tape, x, tape.param(p.w2));
    });
    return ad::add(tape, h, f);
}

Tensor mot_block_forward(const Tensor& hidden, std::span<const TokenType> types,
                         std::span<const PositionTriple> positions, const MaskSpec& mask, const MoTBlock& block,
                         const ModelConfig& cfg) {
    ad::Tape tape;
    auto h = tape.constant(hidden);
    return tape.value(mot_block_forward(tape, h, types, positions, mask, block, cfg));
}

ForwardVars model_forward(ad::Tape& tape, const TokenSequence& seq, const ModelParams& params) {
    const ModelConfig& cfg = params.cfg;
    validate_sequence(seq, cfg);
    const SegmentLayout layout = seq.layout();
    const auto types = layout.token_types();
    const auto positions = assign_positions(layout);
    const MaskSpec mask = build_mask(layout);
    const auto offsets = layout.offsets();
    const std::size_t n = layout.total();

    std::vector<std::pair<ad::Var, std::vector<std::size_t>>> parts;
    auto range = [](std::size_t begin, std::size_t len) {
        std::vector<std::size_t> r(len);
        for (std::size_t i = 0; i < len; ++i) r[i] = begin + i;
        return r;
    };
    std::vector<std::size_t> noise_items;
    for (std::size_t s = 0; s < seq.items.size(); ++s) {
        const auto& item = seq.items[s];
        const std::size_t len = layout.segments[s].size();
        if (const auto* t = std::get_if<TextItem>(&item)) {
            std::vector<std::size_t> rows(t->ids.begin(), t->ids.end());
            parts.emplace_back(ad::gather_rows(tape, tape.param(params.tok_embed), rows), range(offsets[s], len));
        } else if (const auto* m = std::get_if<MarkerItem>(&item)) {
            const Tensor& e = m->marker == Marker::image_open ? params.codec.img_open : params.codec.img_close;
            parts.emplace_back(ad::reshape(tape, tape.param(e), {1, cfg.width}), range(offsets[s], 1));
        } else if (const auto* c = std::get_if<CleanImageItem>(&item)) {
            parts.emplace_back(encode_image(tape, c->image, params.codec), range(offsets[s], len));
        } else {
            const auto& ni = std::get<NoiseImageItem>(item);
            auto cond = ad::add(tape, timestep_embed(tape, ni.t, params.t_embed),
                                ns_embed(tape, ni.sigma_bar, params.ns_embed));
            auto x = ad::add_bias(tape, encode_image(tape, ni.state, params.codec), cond);
            parts.emplace_back(x, range(offsets[s], len));
            noise_items.push_back(s);
        }
    }
    ad::Var h = ad::merge_rows(tape, n, parts);
    for (const auto& block : params.blocks) {
        h = mot_block_forward(tape, h, types, positions, mask, block, cfg);
    }

    ForwardVars out;
    for (std::size_t i = 0; i < n; ++i) {
        if (types[i] == TokenType::text) out.text_positions.push_back(i);
    }
    if (!out.text_positions.empty()) {
        auto th = ad::gather_rows(tape, h, out.text_positions);
        th = ad::rms_norm(tape, th, tape.param(params.und_final_norm), cfg.norm_eps);
        out.text_logits = ad::matmul(tape, th, tape.param(params.text_head));
    } else {
        out.text_logits = tape.constant(Tensor({0, cfg.vocab}));
    }
    for (std::size_t s : noise_items) {
        const auto& seg = layout.segments[s];
        auto nh = ad::gather_rows(tape, h, range(offsets[s], seg.size()));
        nh = ad::rms_norm(tape, nh, tape.param(params.gen_final_norm), cfg.norm_eps);
        out.x_hat.push_back(decode_patches(tape, nh, seg.rows, seg.cols, params.codec));
    }
    return out;
}

ModelOutput model_forward(const TokenSequence& seq, const ModelParams& params) {
    ad::Tape tape;
    auto vars = model_forward(tape, seq, params);
    ModelOutput out;
    out.text_logits = tape.value(vars.text_logits);
    out.text_positions = std::move(vars.text_positions);
    for (auto v : vars.x_hat) out.x_hat.push_back(tape.value(v));
    return out;
}

}  // namespace unimot
