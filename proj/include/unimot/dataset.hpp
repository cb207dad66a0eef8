#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "unimot/tensor.hpp"

namespace unimot {

// Caption vocabulary: structural tokens, then colors, shapes, positions.
struct Vocabulary {
    static constexpr std::array<std::string_view, 3> structural{"<pad>", "<bos>", "<eos>"};
    static constexpr std::array<std::string_view, 6> colors{"red", "green", "blue", "yellow", "cyan", "magenta"};
    static constexpr std::array<std::string_view, 3> shapes{"square", "circle", "bar"};
    static constexpr std::array<std::string_view, 5> positions{"center", "top-left", "top-right", "bottom-left",
                                                               "bottom-right"};

    static constexpr int pad = 0;
    static constexpr int bos = 1;
    static constexpr int eos = 2;

    static constexpr std::size_t size() {
        return structural.size() + colors.size() + shapes.size() + positions.size();
    }
    static int color_id(std::size_t i) { return static_cast<int>(structural.size() + i); }
    static int shape_id(std::size_t i) { return static_cast<int>(structural.size() + colors.size() + i); }
    static int position_id(std::size_t i) {
        return static_cast<int>(structural.size() + colors.size() + shapes.size() + i);
    }

    static std::optional<int> lookup(std::string_view word);
    static std::string word(int id);
    // Pixel values in [-1, 1] of each named color.
    static std::array<double, 3> rgb(std::size_t color);
};

inline constexpr double kBackground = 0.5;  // neutral light gray

struct SyntheticSpec {
    std::uint64_t seed = 7;
    std::size_t count = 256;
    std::size_t height = 64;
    std::size_t width = 64;
};

struct Example {
    std::vector<int> caption;  // <bos> color shape position <eos>
    Tensor image;              // [3, H, W]
    std::size_t color = 0;
    std::size_t shape = 0;
    std::size_t position = 0;
};

// Each example is one solid shape of a named color at a named position on a gray
// background. Deterministic in the spec.
std::vector<Example> make_dataset(const SyntheticSpec& spec);

// Pixel coordinates (row, col) of a named position's center.
std::pair<std::size_t, std::size_t> position_center(std::size_t position, std::size_t height, std::size_t width);

// FNV-1a over caption ids (int32 LE) and image values (float64 LE bits).
std::uint64_t dataset_hash(std::span<const Example> data);

// Parses whitespace-separated words or integer ids.
std::vector<int> parse_prompt(std::string_view text);

}  // namespace unimot
