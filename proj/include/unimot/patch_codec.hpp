#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>

#include "unimot/autograd.hpp"
#include "unimot/random.hpp"
#include "unimot/tensor.hpp"

namespace unimot {

// Pixels per token side. The encoder downsamples by 16 then by 2.
inline constexpr std::size_t kPatch = 32;
inline constexpr std::size_t kStem = 16;
inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kPatchValues = kChannels * kPatch * kPatch;

// Images are [3, H, W] tensors; values nominally in [-1, 1] for clean images.
void check_image_dims(std::size_t height, std::size_t width);
void check_image(const Tensor& image);
inline std::size_t token_count(std::size_t height, std::size_t width) { return (height / kPatch) * (width / kPatch); }

struct PatchGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Tensor embeddings;  // [rows * cols, dim], row-major over the grid

    std::size_t dim() const { return embeddings.cols(); }
};

// Encoder: non-overlapping 16x16 conv (3 -> dim/2), GELU, 2x2 conv (dim/2 -> dim),
// plus 2D sinusoidal positions. Decoder: per-token dim -> 4 dim (GELU) -> 3072.
struct CodecParams {
    Tensor conv1_w;  // [3*16*16, dim/2], input order (channel, ky, kx)
    Tensor conv1_b;  // [dim/2]
    Tensor conv2_w;  // [4 * dim/2, dim], input order (dy, dx, channel)
    Tensor conv2_b;  // [dim]
    Tensor dec_w1;   // [dim, 4 dim]
    Tensor dec_b1;   // [4 dim]
    Tensor dec_w2;   // [4 dim, 3072], output order (channel, py, px)
    Tensor dec_b2;   // [3072]
    Tensor img_open;   // [dim] learned <img> marker
    Tensor img_close;  // [dim] learned </img> marker

    std::size_t dim() const { return conv2_b.size(); }

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        f(prefix + "conv1_w", self.conv1_w);
        f(prefix + "conv1_b", self.conv1_b);
        f(prefix + "conv2_w", self.conv2_w);
        f(prefix + "conv2_b", self.conv2_b);
        f(prefix + "dec_w1", self.dec_w1);
        f(prefix + "dec_b1", self.dec_b1);
        f(prefix + "dec_w2", self.dec_w2);
        f(prefix + "dec_b2", self.dec_b2);
        f(prefix + "img_open", self.img_open);
        f(prefix + "img_close", self.img_close);
    }
};

CodecParams init_codec(std::size_t dim, RandomStream rng);

// [rows*cols, dim]: first dim/2 channels encode the row index, the rest the column;
// each half is [sin(p w_i) ..., cos(p w_i) ...] with w_i = 10000^(-i / (dim/4)).
Tensor sinusoidal_pe2d(std::size_t rows, std::size_t cols, std::size_t dim);

PatchGrid encode_image(const Tensor& image, const CodecParams& params);
Tensor decode_patches(const PatchGrid& states, const CodecParams& params);

// Tape versions used by the model. Images are inputs, never differentiated.
ad::Var encode_image(ad::Tape& tape, const Tensor& image, const CodecParams& params);
// states: [rows*cols, dim] -> [3, rows*32, cols*32]
ad::Var decode_patches(ad::Tape& tape, ad::Var states, std::size_t rows, std::size_t cols, const CodecParams& params);

// Binary PPM (P6, maxval 255). Bytes map linearly: v = byte / 127.5 - 1;
// writing rounds (v + 1) * 127.5 to nearest and clamps to [0, 255].
Tensor read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Tensor& image);
double byte_to_pixel(unsigned char b) noexcept;
unsigned char pixel_to_byte(double v) noexcept;

}  // namespace unimot
