#pragma once

#include <algorithm>
#include <cmath>
#include <map>

#include "eit3d/error.hpp"
#include "eit3d/forward_solver.hpp"
#include "eit3d/mesh.hpp"

namespace fixtures {

// Built once per test binary; meshing is deterministic.
inline const eit3d::Mesh& mesh(int resolution) {
  static std::map<int, eit3d::Mesh> cache;
  auto it = cache.find(resolution);
  if (it == cache.end()) it = cache.emplace(resolution, eit3d::build_tank_mesh({}, resolution)).first;
  return it->second;
}

inline const eit3d::VoxelMap& vmap(int resolution) {
  static std::map<int, eit3d::VoxelMap> cache;
  auto it = cache.find(resolution);
  if (it == cache.end()) it = cache.emplace(resolution, eit3d::build_voxel_map(mesh(resolution), {})).first;
  return it->second;
}

inline eit3d::ElectrodeModel electrodes(double z = 1e-3) { return eit3d::ElectrodeModel::uniform(32, z); }

inline double rel_diff(double a, double b) {
  const double d = std::max(std::abs(a), std::abs(b));
  return d == 0.0 ? 0.0 : std::abs(a - b) / d;
}

}  // namespace fixtures
