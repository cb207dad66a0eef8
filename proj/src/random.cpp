#include "unimot/random.hpp"

#include <cmath>
#include <numbers>

namespace unimot {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

// Domain tag separating split() derivations from ordinary draws.
constexpr std::uint32_t kSplitTag = 0x5EED5EEDu;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) noexcept {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

RandomStream::Block philox4x32_10(RandomStream::Block ctr, std::array<std::uint32_t, 2> key) noexcept {
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kMul0, ctr[0], hi0, lo0);
        mulhilo(kMul1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kWeyl0;
        key[1] += kWeyl1;
    }
    return ctr;
}

RandomStream::RandomStream(std::uint64_t seed)
    : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0u, 0u}, counter_(0) {}

RandomStream::Block RandomStream::block_at(std::uint64_t index) const noexcept {
    return philox4x32_10({static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), key_[2], key_[3]},
                         {key_[0], key_[1]});
}

RandomStream RandomStream::split(std::uint64_t label) const {
    // Two blocks from a counter domain ordinary draws never reach (word 3 flipped
    // by the tag) form the child key.
    const std::array<std::uint32_t, 2> k{key_[0], key_[1]};
    const auto a = philox4x32_10(
        {static_cast<std::uint32_t>(label), static_cast<std::uint32_t>(label >> 32), key_[2], key_[3] ^ kSplitTag}, k);
    const auto b = philox4x32_10({a[0], a[1], a[2] ^ kSplitTag, a[3]}, k);
    return RandomStream({a[0] ^ b[2], a[1] ^ b[3], b[0], b[1]}, 0);
}

RandomStream RandomStream::split(std::string_view label) const {
    return split(fnv1a(label));
}

namespace {

inline double to_open_unit(std::uint32_t hi, std::uint32_t lo) noexcept {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;  // 53 bits
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

}  // namespace

double RandomStream::uniform() noexcept {
    const auto b = next_block();
    return to_open_unit(b[0], b[1]);
}

double RandomStream::normal() noexcept {
    const auto b = next_block();
    const double u1 = to_open_unit(b[0], b[1]);
    const double u2 = to_open_unit(b[2], b[3]);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint32_t RandomStream::below(std::uint32_t n) noexcept {
    // Multiply-shift on 64 random bits; bias is at most n / 2^64.
    const auto b = next_block();
    const std::uint64_t r = (static_cast<std::uint64_t>(b[0]) << 32) | b[1];
    return static_cast<std::uint32_t>((static_cast<unsigned __int128>(r) * n) >> 64);
}

}  // namespace unimot
