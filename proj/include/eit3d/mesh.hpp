#pragma once

#include <array>
#include <iosfwd>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace eit3d {

/// Cylindrical tank with two rings of electrodes. Lengths in metres.
struct TankGeometry {
  double radius = 0.10;
  double height = 0.30;
  std::array<double, 2> ring_heights{0.10, 0.20};
  int electrodes_per_ring = 16;
  double electrode_width = 0.02;
  double electrode_height = 0.02;

  /// Throws InvalidArgument when the geometry is not physically realisable.
  void validate() const;

  int electrode_count() const { return 2 * electrodes_per_ring; }
  int ring_of(int electrode) const { return electrode / electrodes_per_ring; }
  /// Angular position of the electrode centre (rad). Both rings share angles.
  double electrode_angle(int electrode) const;
  double electrode_z(int electrode) const { return ring_heights[ring_of(electrode)]; }
  /// Half of the angular footprint, electrode_width measured as arc length.
  double electrode_half_angle() const { return 0.5 * electrode_width / radius; }
};

using Point3 = Eigen::Vector3d;
using Tet = std::array<int, 4>;
using Tri = std::array<int, 3>;

/// Linear tetrahedral mesh of the tank.
///
/// Tets are stored with positive signed volume. Boundary triangles are
/// oriented with outward normals. electrode_patch[e] lists the indices into
/// boundary_tris that form electrode e.
struct Mesh {
  std::vector<Point3> nodes;
  std::vector<Tet> tets;
  std::vector<Tri> boundary_tris;
  std::vector<std::vector<int>> electrode_patch;
  int resolution = 0;
  int layers = 0;

  int node_count() const { return static_cast<int>(nodes.size()); }
  int tet_count() const { return static_cast<int>(tets.size()); }
  int electrode_count() const { return static_cast<int>(electrode_patch.size()); }

  double tet_volume(int t) const;
  Point3 tet_centroid(int t) const;
  double tri_area(int b) const;
  Point3 tri_centroid(int b) const;
  double patch_area(int electrode) const;
  double total_volume() const;
};

double signed_tet_volume(const Point3& a, const Point3& b, const Point3& c, const Point3& d);

/// Structured mesh of the tank. The cross-section is an O-grid: a square core
/// of about (pi/4 * resolution)^2 cells inside resolution/4 rings that blend
/// out to the wall, triangulated and extruded over
/// round(resolution * height / diameter) layers, each prism cut into three
/// tetrahedra. Wall angles and layer heights are nudged so that electrode
/// edges fall on mesh lines when the grid can resolve them.
///
/// Throws InvalidArgument naming the electrode if any patch comes out empty.
Mesh build_tank_mesh(const TankGeometry& geometry, int resolution);

/// Plain-text dump: header line, then one "v x y z" per node, one
/// "t a b c d" per tet, one "f a b c" per boundary triangle and one
/// "e electrode tri-index" per patch triangle.
void write_mesh_text(const Mesh& mesh, std::ostream& out);

/// Reconstruction grid dimensions (x fastest, then y, then z).
inline constexpr int kGridX = 32;
inline constexpr int kGridY = 32;
inline constexpr int kGridZ = 40;
inline constexpr int kVoxelCount = kGridX * kGridY * kGridZ;

/// Coupling between FEM elements and the 32x32x40 voxel grid spanning the
/// tank's bounding box.
struct VoxelMap {
  static constexpr int kOutside = -1;

  std::array<int, 3> grid_dims{kGridX, kGridY, kGridZ};
  Point3 lo = Point3::Zero();
  Point3 hi = Point3::Zero();
  /// Element containing each voxel centre, or kOutside.
  std::vector<int> tet_of_voxel;
  /// Inverse of tet_of_voxel.
  std::vector<std::vector<int>> voxels_of_tet;
  /// Inside voxel that owns each element (the one holding its centroid, or the
  /// nearest inside voxel when the centroid's voxel is outside the cylinder).
  std::vector<int> voxel_of_tet;
  /// Linear indices of inside voxels in ascending order; defines the column
  /// order of voxel-space operators.
  std::vector<int> inside_voxels;
  /// Column index of each voxel in inside_voxels, or kOutside.
  std::vector<int> column_of_voxel;

  int voxel_count() const { return grid_dims[0] * grid_dims[1] * grid_dims[2]; }
  int inside_count() const { return static_cast<int>(inside_voxels.size()); }
  int linear(int i, int j, int k) const { return (k * grid_dims[1] + j) * grid_dims[0] + i; }
  std::array<int, 3> unravel(int idx) const;
  Point3 voxel_size() const;
  Point3 voxel_center(int idx) const;
  bool inside(int idx) const { return tet_of_voxel[idx] != kOutside; }
};

VoxelMap build_voxel_map(const Mesh& mesh, const TankGeometry& geometry);

}  // namespace eit3d
