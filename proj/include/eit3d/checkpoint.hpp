#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "eit3d/training.hpp"

namespace eit3d {

/// Layout: "TNNETCKP", u32 version, u64 descriptor length, UTF-8 JSON
/// descriptor (architecture, tensor names and shapes, training metadata),
/// then every parameter followed by every batch-norm buffer as
/// little-endian f32 in descriptor order, then a CRC-32 of all preceding bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const TrainedModel& model);
TrainedModel decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const TrainedModel& model, const std::string& path);
TrainedModel load_checkpoint(const std::string& path);

}  // namespace eit3d
