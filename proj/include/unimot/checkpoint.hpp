#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unimot/config.hpp"
#include "unimot/mot.hpp"
#include "unimot/random.hpp"

namespace unimot {

inline constexpr char kCheckpointMagic[8] = {'U', 'M', 'O', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    TrainConfig config;
    ModelParams params;
    ModelParams ema;
    RandomStream rng;
    std::uint64_t step = 0;
};

// Layout (all integers little-endian):
//   magic[8] "UMOTCKPT", u32 version
//   u64 config length, config text (format_config)
//   u32 array count, then per array:
//     u16 name length, name, u8 dtype (1 = f64), u8 rank, u64 dims[rank], payload
//   u32 rng key[4], u64 rng counter, u64 step
//   u32 CRC-32 of every preceding byte
std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace unimot
