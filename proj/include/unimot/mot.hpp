#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "unimot/attention.hpp"
#include "unimot/autograd.hpp"
#include "unimot/layout.hpp"
#include "unimot/patch_codec.hpp"
#include "unimot/random.hpp"
#include "unimot/rope.hpp"

namespace unimot {

struct ModelConfig {
    std::size_t vocab = 64;
    std::size_t width = 64;
    std::size_t layers = 2;
    std::size_t head_size = 16;
    std::size_t kv_heads = 1;  // 4 query heads share one kv head at width 64
    std::size_t ffn_mult = 4;
    double norm_eps = 1e-6;
    RopeConfig rope;

    std::size_t q_heads() const noexcept { return width / head_size; }
    void validate() const;
};

// One stream's weights for one layer. Linear maps are stored [in, out].
struct StreamParams {
    Tensor attn_norm;  // [width]
    Tensor wq;         // [width, q_heads * head]
    Tensor wk;         // [width, kv_heads * head]
    Tensor wv;         // [width, kv_heads * head]
    Tensor wo;         // [q_heads * head, width]
    Tensor ffn_norm;   // [width]
    Tensor w1;         // [width, ffn_mult * width]
    Tensor w2;         // [ffn_mult * width, width]

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        f(prefix + "attn_norm", self.attn_norm);
        f(prefix + "wq", self.wq);
        f(prefix + "wk", self.wk);
        f(prefix + "wv", self.wv);
        f(prefix + "wo", self.wo);
        f(prefix + "ffn_norm", self.ffn_norm);
        f(prefix + "w1", self.w1);
        f(prefix + "w2", self.w2);
    }
};

struct MoTBlock {
    StreamParams und;
    StreamParams gen;
};

// Sinusoidal features -> linear -> GELU -> linear.
struct EmbedderParams {
    Tensor w1, b1, w2, b2;

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        f(prefix + "w1", self.w1);
        f(prefix + "b1", self.b1);
        f(prefix + "w2", self.w2);
        f(prefix + "b2", self.b2);
    }
};

struct ModelParams {
    ModelConfig cfg;
    Tensor tok_embed;  // [vocab, width]
    CodecParams codec;
    std::vector<MoTBlock> blocks;
    Tensor und_final_norm;  // [width]
    Tensor gen_final_norm;  // [width]
    Tensor text_head;       // [width, vocab]
    EmbedderParams t_embed;
    EmbedderParams ns_embed;

    // Fixed traversal order shared by the optimizer, EMA and checkpoints.
    template <class Self, class F>
    static void visit(Self& self, F&& f) {
        f(std::string("tok_embed"), self.tok_embed);
        CodecParams::visit(self.codec, "codec.", f);
        for (std::size_t l = 0; l < self.blocks.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            StreamParams::visit(self.blocks[l].und, p + "und.", f);
            StreamParams::visit(self.blocks[l].gen, p + "gen.", f);
        }
        f(std::string("und_final_norm"), self.und_final_norm);
        f(std::string("gen_final_norm"), self.gen_final_norm);
        f(std::string("text_head"), self.text_head);
        EmbedderParams::visit(self.t_embed, "t_embed.", f);
        EmbedderParams::visit(self.ns_embed, "ns_embed.", f);
    }
    template <class F>
    void for_each(F&& f) { visit(*this, f); }
    template <class F>
    void for_each(F&& f) const { visit(*this, f); }

    std::size_t parameter_count() const;
};

ModelParams init_model(const ModelConfig& cfg, RandomStream rng);

enum class Stream { und, gen };

// Text and clean image tokens -> understanding stream; noise tokens -> generation.
std::vector<Stream> route(std::span<const TokenType> types);

// [sin(1000 v w_i)..., cos(1000 v w_i)...], w_i = 10000^(-i / (dim/2)).
Tensor scalar_features(double v, std::size_t dim);

Tensor timestep_embed(double t, const EmbedderParams& p);
Tensor ns_embed(double sigma_bar, const EmbedderParams& p);
// Analytic d tau / dt of the embedder at t.
Tensor embed_derivative(double v, const EmbedderParams& p);
// s_t = tau_t + NSEmb(sigma_bar)
Tensor conditioning(double t, double sigma_bar, const ModelParams& params);

ad::Var timestep_embed(ad::Tape& tape, double t, const EmbedderParams& p);
ad::Var ns_embed(ad::Tape& tape, double sigma_bar, const EmbedderParams& p);

enum class Marker { image_open, image_close };

struct TextItem {
    std::vector<int> ids;
};
struct MarkerItem {
    Marker marker;
};
struct CleanImageItem {
    Tensor image;
};
struct NoiseImageItem {
    Tensor state;  // z_t, [3, H, W]
    double t = 0.0;
    double sigma_bar = 0.0;
    bool paired = false;
};

using SequenceItem = std::variant<TextItem, MarkerItem, CleanImageItem, NoiseImageItem>;

struct TokenSequence {
    std::vector<SequenceItem> items;

    // Markers are text-type tokens; each item becomes one segment.
    SegmentLayout layout() const;
};

struct ModelOutput {
    Tensor text_logits;                      // [text positions, vocab]
    std::vector<std::size_t> text_positions;  // sequence index of each logits row
    std::vector<Tensor> x_hat;               // one [3, H, W] prediction per noise item
};

struct ForwardVars {
    ad::Var text_logits;
    std::vector<std::size_t> text_positions;
    std::vector<ad::Var> x_hat;
};

ad::Var mot_block_forward(ad::Tape& tape, ad::Var hidden, std::span<const TokenType> types,
                          std::span<const PositionTriple> positions, const MaskSpec& mask, const MoTBlock& block,
                          const ModelConfig& cfg);
Tensor mot_block_forward(const Tensor& hidden, std::span<const TokenType> types,
                         std::span<const PositionTriple> positions, const MaskSpec& mask, const MoTBlock& block,
                         const ModelConfig& cfg);

// Throws Error{invalid_argument} naming the offending item.
void validate_sequence(const TokenSequence& seq, const ModelConfig& cfg);

ForwardVars model_forward(ad::Tape& tape, const TokenSequence& seq, const ModelParams& params);
ModelOutput model_forward(const TokenSequence& seq, const ModelParams& params);

}  // namespace unimot
