#pragma once

// Versioned binary training checkpoints: magic "IRSTCKPT", u32 format
// version, a sequence of little-endian fields, then an FNV-1a 64 checksum of
// everything before it.

#include <filesystem>
#include <string>
#include <string_view>

#include "irstyle/trainer.hpp"

namespace irstyle {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const TrainState& state);
/// Throws ErrorKind::data (corrupt or truncated), ::version, or ::registry
/// when the stored policy's op names differ from `registry`.
TrainState decode_checkpoint(std::string_view bytes, const OpRegistry& registry = OpRegistry::defaults());

void checkpoint_save(const TrainState& state, const std::filesystem::path& path);
TrainState checkpoint_load(const std::filesystem::path& path, const OpRegistry& registry = OpRegistry::defaults());

}  // namespace irstyle
