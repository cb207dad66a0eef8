#include "unimot/dataset.hpp"

#include <bit>
#include <charconv>
#include <sstream>

#include "unimot/error.hpp"
#include "unimot/patch_codec.hpp"
#include "unimot/random.hpp"

namespace unimot {

std::optional<int> Vocabulary::lookup(std::string_view word) {
    int id = 0;
    for (auto group : {std::span<const std::string_view>(structural), std::span<const std::string_view>(colors),
                       std::span<const std::string_view>(shapes), std::span<const std::string_view>(positions)}) {
        for (auto w : group) {
            if (w == word) return id;
            ++id;
        }
    }
    return std::nullopt;
}

std::string Vocabulary::word(int id) {
    int i = 0;
    for (auto group : {std::span<const std::string_view>(structural), std::span<const std::string_view>(colors),
                       std::span<const std::string_view>(shapes), std::span<const std::string_view>(positions)}) {
        for (auto w : group) {
            if (i++ == id) return std::string(w);
        }
    }
    return "<" + std::to_string(id) + ">";
}

std::array<double, 3> Vocabulary::rgb(std::size_t color) {
    static constexpr std::array<std::array<double, 3>, 6> table{{
        {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}, {1, 1, -1}, {-1, 1, 1}, {1, -1, 1},
    }};
    return table.at(color);
}

std::pair<std::size_t, std::size_t> position_center(std::size_t position, std::size_t height, std::size_t width) {
    const std::size_t top = height / 4, bottom = 3 * height / 4;
    const std::size_t left = width / 4, right = 3 * width / 4;
    switch (position) {
        case 0: return {height / 2, width / 2};
        case 1: return {top, left};
        case 2: return {top, right};
        case 3: return {bottom, left};
        default: return {bottom, right};
    }
}

namespace {

bool inside(std::size_t shape, long dy, long dx, long size) {
    const long half = size / 2;
    switch (shape) {
        case 0: return dy >= -half && dy < half && dx >= -half && dx < half;
        case 1: return dy * dy + dx * dx <= half * half;
        default: return dy >= -size / 6 && dy < size / 6 && dx >= -size * 2 / 3 && dx < size * 2 / 3;
    }
}

}  // namespace

std::vector<Example> make_dataset(const SyntheticSpec& spec) {
    check_image_dims(spec.height, spec.width);
    require(spec.count > 0, ErrorCode::invalid_argument, "dataset needs at least one sample");
    RandomStream root(spec.seed);
    const long size = static_cast<long>(std::min(spec.height, spec.width) * 3 / 8);
    std::vector<Example> data;
    data.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) {
        RandomStream rng = root.split(i);
        Example ex;
        ex.color = rng.below(Vocabulary::colors.size());
        ex.shape = rng.below(Vocabulary::shapes.size());
        ex.position = rng.below(Vocabulary::positions.size());
        ex.caption = {Vocabulary::bos, Vocabulary::color_id(ex.color), Vocabulary::shape_id(ex.shape),
                      Vocabulary::position_id(ex.position), Vocabulary::eos};
        ex.image = Tensor({kChannels, spec.height, spec.width}, kBackground);
        const auto [cy, cx] = position_center(ex.position, spec.height, spec.width);
        const auto rgb = Vocabulary::rgb(ex.color);
        for (std::size_t y = 0; y < spec.height; ++y) {
            for (std::size_t x = 0; x < spec.width; ++x) {
                if (!inside(ex.shape, static_cast<long>(y) - static_cast<long>(cy),
                            static_cast<long>(x) - static_cast<long>(cx), size)) {
                    continue;
                }
                for (std::size_t c = 0; c < kChannels; ++c) {
                    ex.image[(c * spec.height + y) * spec.width + x] = rgb[c];
                }
            }
        }
        data.push_back(std::move(ex));
    }
    return data;
}

std::uint64_t dataset_hash(std::span<const Example> data) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&](std::uint64_t v, int bytes) {
        for (int b = 0; b < bytes; ++b) {
            h ^= (v >> (8 * b)) & 0xff;
            h *= 0x100000001b3ull;
        }
    };
    for (const auto& ex : data) {
        for (int id : ex.caption) mix(static_cast<std::uint32_t>(id), 4);
        for (double v : ex.image.data()) mix(std::bit_cast<std::uint64_t>(v), 8);
    }
    return h;
}

std::vector<int> parse_prompt(std::string_view text) {
    std::vector<int> ids;
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) {
        int id = 0;
        auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), id);
        if (ec == std::errc() && ptr == w.data() + w.size()) {
            ids.push_back(id);
            continue;
        }
        auto found = Vocabulary::lookup(w);
        require(found.has_value(), ErrorCode::invalid_argument, "unknown prompt word '" + w + "'");
        ids.push_back(*found);
    }
    return ids;
}

}  // namespace unimot
