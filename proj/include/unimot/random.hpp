#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace unimot {

// Counter-based stream over Philox4x32-10. A draw depends only on (key, counter),
// so streams handed to independent samples can be consumed in any order.
//
// Key layout: words 0-1 are the Philox key, words 2-3 fill the upper half of the
// 128-bit Philox counter. The lower 64 counter bits are the draw index.
class RandomStream {
public:
    using Key = std::array<std::uint32_t, 4>;
    using Block = std::array<std::uint32_t, 4>;

    RandomStream() = default;
    explicit RandomStream(std::uint64_t seed);
    RandomStream(Key key, std::uint64_t counter) : key_(key), counter_(counter) {}

    const Key& key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

    // Independent child stream; the parent is not advanced.
    RandomStream split(std::uint64_t label) const;
    RandomStream split(std::string_view label) const;

    Block block_at(std::uint64_t index) const noexcept;

    // Each call consumes one counter step.
    Block next_block() noexcept { return block_at(counter_++); }
    double uniform() noexcept;  // open interval (0, 1)
    double normal() noexcept;   // standard normal, Box-Muller on one block
    std::uint32_t below(std::uint32_t n) noexcept;  // uniform integer in [0, n)

    friend bool operator==(const RandomStream&, const RandomStream&) = default;

private:
    Key key_{};
    std::uint64_t counter_ = 0;
};

RandomStream::Block philox4x32_10(RandomStream::Block counter, std::array<std::uint32_t, 2> key) noexcept;

}  // namespace unimot
