#include "unimot/patch_codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "unimot/error.hpp"
#include "unimot/ops.hpp"

namespace unimot {

void check_image_dims(std::size_t height, std::size_t width) {
    require(height > 0 && width > 0 && height % kPatch == 0 && width % kPatch == 0, ErrorCode::invalid_argument,
            "image size " + std::to_string(height) + "x" + std::to_string(width) + " is not a positive multiple of 32");
}

void check_image(const Tensor& image) {
    require(image.rank() == 3 && image.dim(0) == kChannels, ErrorCode::shape_mismatch,
            "expected a [3, H, W] image, got " + shape_str(image.shape()));
    check_image_dims(image.dim(1), image.dim(2));
}

namespace {

Tensor normal_tensor(Shape shape, double std, RandomStream& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = std * rng.normal();
    return t;
}

// Rows ordered (token row, token col, dy, dx) so that four consecutive stem
// outputs form one token's 2x2 neighbourhood; columns ordered (channel, ky, kx).
Tensor stem_columns(const Tensor& image) {
    const std::size_t h = image.dim(1), w = image.dim(2);
    const std::size_t gr = h / kPatch, gc = w / kPatch;
    Tensor cols({gr * gc * 4, kChannels * kStem * kStem});
    std::size_t r = 0;
    for (std::size_t tr = 0; tr < gr; ++tr) {
        for (std::size_t tc = 0; tc < gc; ++tc) {
            for (std::size_t dy = 0; dy < 2; ++dy) {
                for (std::size_t dx = 0; dx < 2; ++dx, ++r) {
                    const std::size_t y0 = tr * kPatch + dy * kStem;
                    const std::size_t x0 = tc * kPatch + dx * kStem;
                    double* out = cols.data().data() + r * cols.cols();
                    for (std::size_t c = 0; c < kChannels; ++c) {
                        for (std::size_t ky = 0; ky < kStem; ++ky) {
                            const double* src = image.data().data() + (c * h + y0 + ky) * w + x0;
                            std::copy_n(src, kStem, out);
                            out += kStem;
                        }
                    }
                }
            }
        }
    }
    return cols;
}

}  // namespace

CodecParams init_codec(std::size_t dim, RandomStream rng) {
    require(dim % 4 == 0 && dim > 0, ErrorCode::invalid_argument, "codec width must be a positive multiple of 4");
    const std::size_t half = dim / 2;
    const std::size_t stem_in = kChannels * kStem * kStem;
    CodecParams p;
    p.conv1_w = normal_tensor({stem_in, half}, 1.0 / std::sqrt(static_cast<double>(stem_in)), rng);
    p.conv1_b = Tensor({half});
    p.conv2_w = normal_tensor({4 * half, dim}, 1.0 / std::sqrt(static_cast<double>(4 * half)), rng);
    p.conv2_b = Tensor({dim});
    p.dec_w1 = normal_tensor({dim, 4 * dim}, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
    p.dec_b1 = Tensor({4 * dim});
    p.dec_w2 = normal_tensor({4 * dim, kPatchValues}, 0.02, rng);
    p.dec_b2 = Tensor({kPatchValues});
    p.img_open = normal_tensor({dim}, 0.02, rng);
    p.img_close = normal_tensor({dim}, 0.02, rng);
    return p;
}

Tensor sinusoidal_pe2d(std::size_t rows, std::size_t cols, std::size_t dim) {
    require(dim % 4 == 0 && dim > 0, ErrorCode::invalid_argument,
            "sinusoidal_pe2d: width " + std::to_string(dim) + " does not split into even halves");
    const std::size_t quarter = dim / 4;
    Tensor pe({rows * cols, dim});
    auto fill_half = [&](double* out, double pos) {
        for (std::size_t i = 0; i < quarter; ++i) {
            const double omega = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(quarter));
            out[i] = std::sin(pos * omega);
            out[quarter + i] = std::cos(pos * omega);
        }
    };
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            double* row = pe.data().data() + (r * cols + c) * dim;
            fill_half(row, static_cast<double>(r));
            fill_half(row + dim / 2, static_cast<double>(c));
        }
    }
    return pe;
}

ad::Var encode_image(ad::Tape& tape, const Tensor& image, const CodecParams& params) {
    check_image(image);
    require(image.all_finite(), ErrorCode::non_finite, "encode_image: non-finite pixel");
    const std::size_t rows = image.dim(1) / kPatch, cols = image.dim(2) / kPatch;
    const std::size_t dim = params.dim();
    const std::size_t half = params.conv1_b.size();

    auto x = tape.constant(stem_columns(image));
    auto h = ad::matmul(tape, x, tape.param(params.conv1_w));
    h = ad::add_bias(tape, h, tape.param(params.conv1_b));
    h = ad::gelu(tape, h);
    h = ad::reshape(tape, h, {rows * cols, 4 * half});
    h = ad::matmul(tape, h, tape.param(params.conv2_w));
    h = ad::add_bias(tape, h, tape.param(params.conv2_b));
    return ad::add_const(tape, h, sinusoidal_pe2d(rows, cols, dim));
}

ad::Var decode_patches(ad::Tape& tape, ad::Var states, std::size_t rows, std::size_t cols, const CodecParams& params) {
    const Tensor& sv = tape.value(states);
    require(sv.rank() == 2 && sv.cols() == params.dec_w1.dim(0), ErrorCode::shape_mismatch,
            "decode_patches: states " + shape_str(sv.shape()) + " do not match decoder width " +
                std::to_string(params.dec_w1.dim(0)));
    require(sv.rows() == rows * cols, ErrorCode::shape_mismatch, "decode_patches: token count does not match grid");

    auto h = ad::matmul(tape, states, tape.param(params.dec_w1));
    h = ad::add_bias(tape, h, tape.param(params.dec_b1));
    h = ad::gelu(tape, h);
    h = ad::matmul(tape, h, tape.param(params.dec_w2));
    h = ad::add_bias(tape, h, tape.param(params.dec_b2));

    const std::size_t height = rows * kPatch, width = cols * kPatch;
    std::vector<std::size_t> index(kChannels * height * width);
    for (std::size_t c = 0; c < kChannels; ++c) {
        for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) {
                const std::size_t token = (y / kPatch) * cols + x / kPatch;
                const std::size_t within = (c * kPatch + y % kPatch) * kPatch + x % kPatch;
                index[(c * height + y) * width + x] = token * kPatchValues + within;
            }
        }
    }
    return ad::gather_flat(tape, h, {kChannels, height, width}, std::move(index));
}

PatchGrid encode_image(const Tensor& image, const CodecParams& params) {
    ad::Tape tape;
    auto v = encode_image(tape, image, params);
    return PatchGrid{image.dim(1) / kPatch, image.dim(2) / kPatch, tape.value(v)};
}

Tensor decode_patches(const PatchGrid& states, const CodecParams& params) {
    ad::Tape tape;
    auto s = tape.constant(states.embeddings);
    return tape.value(decode_patches(tape, s, states.rows, states.cols, params));
}

double byte_to_pixel(unsigned char b) noexcept {
    return static_cast<double>(b) / 127.5 - 1.0;
}

unsigned char pixel_to_byte(double v) noexcept {
    const double s = std::round((v + 1.0) * 127.5);
    return static_cast<unsigned char>(std::clamp(s, 0.0, 255.0));
}

namespace {

std::string next_header_token(std::istream& in) {
    std::string tok;
    while (in >> tok) {
        if (tok[0] == '#') {
            std::string rest;
            std::getline(in, rest);
            continue;
        }
        return tok;
    }
    fail(ErrorCode::format, "ppm: truncated header");
}

}  // namespace

Tensor read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path.string());
    require(next_header_token(in) == "P6", ErrorCode::format, path.string() + ": not a binary P6 PPM");
    std::size_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoul(next_header_token(in));
        h = std::stoul(next_header_token(in));
        maxval = std::stoul(next_header_token(in));
    } catch (const std::logic_error&) {
        fail(ErrorCode::format, path.string() + ": malformed PPM header");
    }
    require(maxval == 255, ErrorCode::format, path.string() + ": only 8-bit PPM is supported");
    in.get();  // single whitespace before the raster
    std::vector<unsigned char> raster(w * h * 3);
    in.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
    require(static_cast<std::size_t>(in.gcount()) == raster.size(), ErrorCode::format, path.string() + ": truncated raster");
    Tensor img({kChannels, h, w});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < kChannels; ++c) {
                img[(c * h + y) * w + x] = byte_to_pixel(raster[(y * w + x) * 3 + c]);
            }
        }
    }
    return img;
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
    require(image.rank() == 3 && image.dim(0) == kChannels, ErrorCode::shape_mismatch,
            "write_ppm: expected [3, H, W], got " + shape_str(image.shape()));
    const std::size_t h = image.dim(1), w = image.dim(2);
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
    out << "P6\n" << w << ' ' << h << "\n255\n";
    std::vector<unsigned char> raster(w * h * 3);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < kChannels; ++c) {
                raster[(y * w + x) * 3 + c] = pixel_to_byte(image[(c * h + y) * w + x]);
            }
        }
    }
    out.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
    require(static_cast<bool>(out), ErrorCode::io, "short write to " + path.string());
}

}  // namespace unimot
