#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "segdt/codec.hpp"
#include "segdt/dit.hpp"

namespace segdt {

// Binary container, little-endian throughout:
//   "SGDT" | u32 version | config | u64 seed | u32 epoch | tensor table
//   "SGCD" | u32 version | config + kind     | tensor table
// Tensor table: u32 count, then per tensor u16 name length, name bytes,
// u32 ndim, u64 dims, f32 payload. The file must end exactly at the last
// payload byte.

struct ModelCheckpointMeta {
    DiTConfig config;
    std::uint64_t seed = 0;
    std::uint32_t epoch = 0;
};

void save_model_checkpoint(const std::string& path, const DiTConfig& cfg,
                           DiTParams<float>& params, std::uint64_t seed, std::uint32_t epoch);

// Header only; cheap way to recover the architecture before allocating.
ModelCheckpointMeta peek_model_checkpoint(const std::string& path);

// Fills an already-allocated parameter set; names and shapes must match the
// file exactly (same order init_dit produces).
ModelCheckpointMeta load_model_checkpoint(const std::string& path, DiTParams<float>& params);

void save_codec_checkpoint(const std::string& path, Codec<float>& codec);
std::unique_ptr<Codec<float>> load_codec_checkpoint(const std::string& path);

} // namespace segdt
