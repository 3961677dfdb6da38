#pragma once

#include <vector>

#include "eit3d/mesh.hpp"

namespace eit3d {

/// Normalized conductivity change on the 32x32x40 grid, x fastest, then y,
/// then z. Values outside the tank are zero.
struct VoxelVolume {
  std::vector<float> data = std::vector<float>(kVoxelCount, 0.0f);

  float& at(int i, int j, int k) { return data[(k * kGridY + j) * kGridX + i]; }
  float at(int i, int j, int k) const { return data[(k * kGridY + j) * kGridX + i]; }

  friend bool operator==(const VoxelVolume&, const VoxelVolume&) = default;
};

}  // namespace eit3d
