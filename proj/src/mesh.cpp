#include "eit3d/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

#include "eit3d/error.hpp"

namespace eit3d {

namespace {

constexpr double kPi = std::numbers::pi;

double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a < 0.0) a += 2.0 * kPi;
  return a;
}

double angle_diff(double a, double b) {
  double d = std::fmod(a - b, 2.0 * kPi);
  if (d > kPi) d -= 2.0 * kPi;
  if (d <= -kPi) d += 2.0 * kPi;
  return d;
}

// Piecewise-linear displacement field over a periodic or bounded 1-D
// coordinate. Knots are (position, displacement) pairs sorted by position.
class Displacement {
 public:
  Displacement(std::vector<std::pair<double, double>> knots, double period)
      : knots_(std::move(knots)), period_(period) {}

  double operator()(double x) const {
    if (knots_.empty()) return 0.0;
    if (knots_.size() == 1) return period_ > 0.0 ? knots_[0].second : 0.0;
    auto it = std::upper_bound(knots_.begin(), knots_.end(), x,
                               [](double v, const auto& k) { return v < k.first; });
    std::pair<double, double> a, b;
    if (it == knots_.begin() || it == knots_.end()) {
      if (period_ <= 0.0) return it == knots_.begin() ? knots_.front().second : knots_.back().second;
      a = knots_.back();
      b = knots_.front();
      if (it == knots_.begin()) {
        a.first -= period_;
      } else {
        b.first += period_;
      }
    } else {
      a = *(it - 1);
      b = *it;
    }
    const double t = (x - a.first) / (b.first - a.first);
    return a.second + t * (b.second - a.second);
  }

 private:
  std::vector<std::pair<double, double>> knots_;
  double period_;
};

// Snap the nearest node of a uniform 1-D lattice onto each feature position,
// skipping features whose node is taken or whose move would squeeze a cell
// below a quarter of the lattice spacing.
std::vector<std::pair<double, double>> snap_knots(const std::vector<double>& lattice,
                                                  std::vector<double> features, double spacing,
                                                  double period) {
  std::sort(features.begin(), features.end());
  const int n = static_cast<int>(lattice.size());
  std::vector<double> disp(n, 0.0);
  std::vector<bool> taken(n, false);
  auto distance = [&](double a, double b) { return period > 0.0 ? angle_diff(a, b) : a - b; };
  for (double f : features) {
    int best = -1;
    double best_d = 0.0;
    for (int k = 0; k < n; ++k) {
      const double d = distance(f, lattice[k]);
      if (best < 0 || std::abs(d) < std::abs(best_d)) {
        best = k;
        best_d = d;
      }
    }
    if (taken[best]) continue;
    bool ok = true;
    for (int nb : {best - 1, best + 1}) {
      int k = nb;
      if (period > 0.0) {
        k = (k + n) % n;
      } else if (k < 0 || k >= n) {
        continue;
      }
      const double gap = std::abs(distance(lattice[k] + disp[k], lattice[best] + best_d));
      if (gap < 0.25 * spacing) ok = false;
    }
    if (!ok) continue;
    taken[best] = true;
    disp[best] = best_d;
  }
  std::vector<std::pair<double, double>> knots;
  for (int k = 0; k < n; ++k) {
    if (taken[k]) knots.emplace_back(lattice[k], disp[k]);
  }
  if (period <= 0.0) {
    // Pin the ends of a bounded axis.
    if (!taken.front()) knots.insert(knots.begin(), {lattice.front(), 0.0});
    if (!taken.back()) knots.emplace_back(lattice.back(), 0.0);
  }
  std::sort(knots.begin(), knots.end());
  return knots;
}

}  // namespace

void TankGeometry::validate() const {
  require(radius > 0.0 && height > 0.0, "tank radius and height must be positive");
  require(0.0 < ring_heights[0] && ring_heights[0] < ring_heights[1] && ring_heights[1] < height,
          "ring heights must satisfy 0 < z0 < z1 < height");
  require(electrodes_per_ring >= 4, "need at least 4 electrodes per ring");
  require(electrode_width > 0.0 && electrode_height > 0.0, "electrode size must be positive");
  require(electrodes_per_ring * electrode_width < 2.0 * kPi * radius,
          "electrodes overlap: electrodes_per_ring * electrode_width >= circumference");
  require(ring_heights[0] - 0.5 * electrode_height > 0.0 &&
              ring_heights[1] + 0.5 * electrode_height < height &&
              ring_heights[1] - ring_heights[0] > electrode_height,
          "electrode rings must fit inside the tank without overlapping");
}

double TankGeometry::electrode_angle(int electrode) const {
  const int pos = electrode % electrodes_per_ring;
  return 2.0 * kPi * pos / electrodes_per_ring;
}

double signed_tet_volume(const Point3& a, const Point3& b, const Point3& c, const Point3& d) {
  return (b - a).dot((c - a).cross(d - a)) / 6.0;
}

double Mesh::tet_volume(int t) const {
  const Tet& e = tets[t];
  return signed_tet_volume(nodes[e[0]], nodes[e[1]], nodes[e[2]], nodes[e[3]]);
}

Point3 Mesh::tet_centroid(int t) const {
  const Tet& e = tets[t];
  return 0.25 * (nodes[e[0]] + nodes[e[1]] + nodes[e[2]] + nodes[e[3]]);
}

double Mesh::tri_area(int b) const {
  const Tri& f = boundary_tris[b];
  return 0.5 * (nodes[f[1]] - nodes[f[0]]).cross(nodes[f[2]] - nodes[f[0]]).norm();
}

Point3 Mesh::tri_centroid(int b) const {
  const Tri& f = boundary_tris[b];
  return (nodes[f[0]] + nodes[f[1]] + nodes[f[2]]) / 3.0;
}

double Mesh::patch_area(int electrode) const {
  double a = 0.0;
  for (int b : electrode_patch[electrode]) a += tri_area(b);
  return a;
}

double Mesh::total_volume() const {
  double v = 0.0;
  for (int t = 0; t < tet_count(); ++t) v += tet_volume(t);
  return v;
}

namespace {

// O-grid cross-section of the disc: a square core of core_cells x core_cells
// quads surrounded by `layers` rings that blend the core perimeter into the
// circle. Every loop is parametrised by s in [0, 1), s = 0 at the (+x, -y)
// corner of the core and at angle -pi/4 on the circle. Outer rings carry
// `ring_nodes` nodes; the first ring is zipped onto the coarser core perimeter.
struct Section {
  std::vector<Eigen::Vector2d> nodes;
  std::vector<std::array<int, 3>> tris;
};

Section disc_section(double radius, int core_cells, int layers, int ring_nodes, double core_fraction,
                     const Displacement& ang_disp) {
  const int m = core_cells;
  Section s;
  const double half = core_fraction * radius;
  for (int j = 0; j <= m; ++j)
    for (int i = 0; i <= m; ++i) s.nodes.emplace_back(half * (-1.0 + 2.0 * i / m), half * (-1.0 + 2.0 * j / m));
  auto core_id = [&](int i, int j) { return j * (m + 1) + i; };
  auto add_quad = [&](int a, int b, int c, int d) {
    if ((s.nodes[a] - s.nodes[c]).squaredNorm() <= (s.nodes[b] - s.nodes[d]).squaredNorm()) {
      s.tris.push_back({a, b, c});
      s.tris.push_back({a, c, d});
    } else {
      s.tris.push_back({a, b, d});
      s.tris.push_back({b, c, d});
    }
  };
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i) add_quad(core_id(i, j), core_id(i + 1, j), core_id(i + 1, j + 1), core_id(i, j + 1));

  auto square_at = [&](double t) {
    const double u = 4.0 * t;
    const int side = std::min(3, static_cast<int>(u));
    const double o = -1.0 + 2.0 * (u - side);
    switch (side) {
      case 0: return Eigen::Vector2d(half, half * o);
      case 1: return Eigen::Vector2d(-half * o, half);
      case 2: return Eigen::Vector2d(-half, -half * o);
      default: return Eigen::Vector2d(half * o, -half);
    }
  };
  auto circle_at = [&](double t) {
    double th = -0.25 * kPi + 2.0 * kPi * t;
    th += ang_disp(wrap_angle(th));
    return Eigen::Vector2d(radius * std::cos(th), radius * std::sin(th));
  };

  std::vector<int> inner(4 * m);
  for (int a = 0; a < 4 * m; ++a) {
    const int side = a / m, o = a % m;
    switch (side) {
      case 0: inner[a] = core_id(m, o); break;
      case 1: inner[a] = core_id(m - o, m); break;
      case 2: inner[a] = core_id(0, m - o); break;
      default: inner[a] = core_id(o, 0); break;
    }
  }
  for (int k = 1; k <= layers; ++k) {
    const double w = static_cast<double>(k) / layers;
    std::vector<int> outer(ring_nodes);
    for (int a = 0; a < ring_nodes; ++a) {
      const double t = static_cast<double>(a) / ring_nodes;
      outer[a] = static_cast<int>(s.nodes.size());
      s.nodes.push_back((1.0 - w) * square_at(t) + w * circle_at(t));
    }
    // Zip the two loops together, always advancing along the loop whose next
    // node comes first in s.
    const int p = static_cast<int>(inner.size()), q = ring_nodes;
    int i = 0, j = 0;
    while (i < p || j < q) {
      const double si = static_cast<double>(i + 1) / p, tj = static_cast<double>(j + 1) / q;
      const int a = inner[i % p], b = inner[(i + 1) % p], c = outer[j % q], d = outer[(j + 1) % q];
      bool step_inner = j == q || (i < p && si < tj);
      if (i < p && j < q && si == tj) step_inner = (s.nodes[b] - s.nodes[c]).squaredNorm() <= (s.nodes[a] - s.nodes[d]).squaredNorm();
      if (step_inner) {
        s.tris.push_back({a, b, c});
        ++i;
      } else {
        s.tris.push_back({a, d, c});
        ++j;
      }
    }
    inner = std::move(outer);
  }
  return s;
}

}  // namespace

Mesh build_tank_mesh(const TankGeometry& g, int resolution) {
  g.validate();
  require(resolution >= 6, "mesh resolution must be at least 6 cells per axis");

  const int n = resolution;
  const int nz = std::max(2, static_cast<int>(std::lround(n * g.height / (2.0 * g.radius))));
  // Core spans half the radius; the annulus is twice as fine angularly as the
  // core perimeter, since the electrode edges dominate the discretisation error.
  const double core_fraction = 0.5;
  const int core_cells = std::max(2, static_cast<int>(std::lround(kPi * n / 4.0)));
  const int layers = std::max(2, static_cast<int>(std::lround((1.0 - core_fraction) * n / 2.0)));
  const int ring = 8 * core_cells;
  const double ang_step = 2.0 * kPi / ring;
  std::vector<double> ring_lattice(ring);
  for (int k = 0; k < ring; ++k) ring_lattice[k] = wrap_angle(-0.25 * kPi + k * ang_step);
  std::sort(ring_lattice.begin(), ring_lattice.end());
  std::vector<double> ang_features;
  for (int e = 0; e < g.electrodes_per_ring; ++e) {
    const double c = g.electrode_angle(e);
    ang_features.push_back(wrap_angle(c - g.electrode_half_angle()));
    ang_features.push_back(wrap_angle(c + g.electrode_half_angle()));
  }
  const Displacement ang_disp(snap_knots(ring_lattice, ang_features, ang_step, 2.0 * kPi),
                              2.0 * kPi);

  const double dz = g.height / nz;
  std::vector<double> z_lattice(nz + 1);
  for (int k = 0; k <= nz; ++k) z_lattice[k] = k * dz;
  std::vector<double> z_features;
  for (double zc : g.ring_heights) {
    z_features.push_back(zc - 0.5 * g.electrode_height);
    z_features.push_back(zc + 0.5 * g.electrode_height);
  }
  const Displacement z_disp(snap_knots(z_lattice, z_features, dz, 0.0), 0.0);

  const Section sec = disc_section(g.radius, core_cells, layers, ring, core_fraction, ang_disp);
  const int per_layer = static_cast<int>(sec.nodes.size());

  Mesh mesh;
  mesh.resolution = n;
  mesh.layers = nz;
  mesh.nodes.reserve(static_cast<std::size_t>(per_layer) * (nz + 1));
  for (int k = 0; k <= nz; ++k) {
    const double z = (k == 0) ? 0.0 : (k == nz ? g.height : z_lattice[k] + z_disp(z_lattice[k]));
    for (const Eigen::Vector2d& p : sec.nodes) mesh.nodes.emplace_back(p.x(), p.y(), z);
  }

  // Each triangle extrudes to a prism split into three tets. With prism
  // vertices sorted by index the cut of every vertical face runs from the
  // bottom of the larger index to the top of the smaller, so neighbouring
  // prisms always agree.
  mesh.tets.reserve(sec.tris.size() * nz * 3);
  for (int k = 0; k < nz; ++k) {
    const int lo = k * per_layer, hi = (k + 1) * per_layer;
    for (auto tri : sec.tris) {
      std::sort(tri.begin(), tri.end());
      const int b0 = lo + tri[0], b1 = lo + tri[1], b2 = lo + tri[2];
      const int t0 = hi + tri[0], t1 = hi + tri[1], t2 = hi + tri[2];
      for (Tet t : {Tet{b0, b1, b2, t0}, Tet{b1, b2, t0, t1}, Tet{b2, t0, t1, t2}}) {
        const double v = signed_tet_volume(mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]],
                                           mesh.nodes[t[3]]);
        if (!(std::abs(v) > 0.0)) {
          fail(ErrorKind::Internal, "degenerate tetrahedron in layer " + std::to_string(k));
        }
        if (v < 0.0) std::swap(t[2], t[3]);
        mesh.tets.push_back(t);
      }
    }
  }

  // Boundary faces: those referenced by exactly one tet, oriented away from
  // the opposite vertex.
  std::map<std::array<int, 3>, std::pair<int, Tri>> faces;
  static constexpr std::array<std::array<int, 4>, 4> kFaces{
      {{1, 2, 3, 0}, {0, 3, 2, 1}, {0, 1, 3, 2}, {0, 2, 1, 3}}};
  for (const Tet& t : mesh.tets) {
    for (const auto& f : kFaces) {
      Tri tri{t[f[0]], t[f[1]], t[f[2]]};
      const Point3 nrm = (mesh.nodes[tri[1]] - mesh.nodes[tri[0]])
                             .cross(mesh.nodes[tri[2]] - mesh.nodes[tri[0]]);
      if (nrm.dot(mesh.nodes[tri[0]] - mesh.nodes[t[f[3]]]) < 0.0) std::swap(tri[1], tri[2]);
      std::array<int, 3> key = tri;
      std::sort(key.begin(), key.end());
      auto [it, inserted] = faces.try_emplace(key, 1, tri);
      if (!inserted) ++it->second.first;
    }
  }
  for (const auto& [key, entry] : faces) {
    if (entry.first == 1) mesh.boundary_tris.push_back(entry.second);
  }

  const double lateral_tol = 1e-9 * g.radius;
  mesh.electrode_patch.assign(g.electrode_count(), {});
  for (int b = 0; b < static_cast<int>(mesh.boundary_tris.size()); ++b) {
    const Tri& f = mesh.boundary_tris[b];
    bool lateral = true;
    for (int v : f) {
      const Point3& p = mesh.nodes[v];
      if (std::abs(std::hypot(p.x(), p.y()) - g.radius) > lateral_tol) lateral = false;
    }
    if (!lateral) continue;
    const Point3 c = mesh.tri_centroid(b);
    const double ang = std::atan2(c.y(), c.x());
    for (int e = 0; e < g.electrode_count(); ++e) {
      if (std::abs(angle_diff(ang, g.electrode_angle(e))) <= g.electrode_half_angle() &&
          std::abs(c.z() - g.electrode_z(e)) <= 0.5 * g.electrode_height) {
        mesh.electrode_patch[e].push_back(b);
        break;
      }
    }
  }
  for (int e = 0; e < g.electrode_count(); ++e) {
    if (mesh.electrode_patch[e].empty()) {
      std::ostringstream msg;
      msg << "electrode " << e + 1 << " (ring " << g.ring_of(e) + 1 << ", position "
          << e % g.electrodes_per_ring + 1 << ") has no boundary triangles at resolution "
          << resolution << "; increase the mesh resolution";
      fail(ErrorKind::InvalidArgument, msg.str());
    }
  }
  return mesh;
}

void write_mesh_text(const Mesh& mesh, std::ostream& out) {
  std::ostringstream buf;
  buf.precision(17);
  buf << "# eit3d-mesh nodes " << mesh.node_count() << " tets " << mesh.tet_count()
      << " boundary " << mesh.boundary_tris.size() << " electrodes " << mesh.electrode_count()
      << '\n';
  for (const Point3& p : mesh.nodes) buf << "v " << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  for (const Tet& t : mesh.tets) buf << "t " << t[0] << ' ' << t[1] << ' ' << t[2] << ' ' << t[3] << '\n';
  for (const Tri& f : mesh.boundary_tris) buf << "f " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
  for (int e = 0; e < mesh.electrode_count(); ++e) {
    for (int b : mesh.electrode_patch[e]) buf << "e " << e << ' ' << b << '\n';
  }
  out << buf.str();
}

// ---------------------------------------------------------------------------
// Voxel coupling

std::array<int, 3> VoxelMap::unravel(int idx) const {
  const int i = idx % grid_dims[0];
  const int j = (idx / grid_dims[0]) % grid_dims[1];
  const int k = idx / (grid_dims[0] * grid_dims[1]);
  return {i, j, k};
}

Point3 VoxelMap::voxel_size() const {
  return (hi - lo).cwiseQuotient(Point3(grid_dims[0], grid_dims[1], grid_dims[2]));
}

Point3 VoxelMap::voxel_center(int idx) const {
  const auto [i, j, k] = unravel(idx);
  const Point3 h = voxel_size();
  return lo + Point3((i + 0.5) * h.x(), (j + 0.5) * h.y(), (k + 0.5) * h.z());
}

namespace {

bool tet_contains(const Mesh& mesh, int t, const Point3& p) {
  const Tet& e = mesh.tets[t];
  const Point3& a = mesh.nodes[e[0]];
  const Point3& b = mesh.nodes[e[1]];
  const Point3& c = mesh.nodes[e[2]];
  const Point3& d = mesh.nodes[e[3]];
  const double v = signed_tet_volume(a, b, c, d);
  const double tol = -1e-12 * v;
  return signed_tet_volume(p, b, c, d) >= tol && signed_tet_volume(a, p, c, d) >= tol &&
         signed_tet_volume(a, b, p, d) >= tol && signed_tet_volume(a, b, c, p) >= tol;
}

}  // namespace

VoxelMap build_voxel_map(const Mesh& mesh, const TankGeometry& g) {
  VoxelMap vm;
  vm.lo = Point3(-g.radius, -g.radius, 0.0);
  vm.hi = Point3(g.radius, g.radius, g.height);
  const int nv = vm.voxel_count();
  const Point3 h = vm.voxel_size();
  const auto& dims = vm.grid_dims;

  auto cell_of = [&](const Point3& p) {
    std::array<int, 3> c;
    for (int a = 0; a < 3; ++a) {
      c[a] = std::clamp(static_cast<int>(std::floor((p[a] - vm.lo[a]) / h[a])), 0, dims[a] - 1);
    }
    return c;
  };

  // Bucket tets by bounding box on the voxel lattice.
  std::vector<std::vector<int>> buckets(nv);
  for (int t = 0; t < mesh.tet_count(); ++t) {
    Point3 bmin = mesh.nodes[mesh.tets[t][0]];
    Point3 bmax = bmin;
    for (int v : mesh.tets[t]) {
      bmin = bmin.cwiseMin(mesh.nodes[v]);
      bmax = bmax.cwiseMax(mesh.nodes[v]);
    }
    const auto c0 = cell_of(bmin);
    const auto c1 = cell_of(bmax);
    for (int k = c0[2]; k <= c1[2]; ++k)
      for (int j = c0[1]; j <= c1[1]; ++j)
        for (int i = c0[0]; i <= c1[0]; ++i) buckets[vm.linear(i, j, k)].push_back(t);
  }

  std::vector<Point3> centroids(mesh.tet_count());
  for (int t = 0; t < mesh.tet_count(); ++t) centroids[t] = mesh.tet_centroid(t);

  vm.tet_of_voxel.assign(nv, VoxelMap::kOutside);
  vm.column_of_voxel.assign(nv, VoxelMap::kOutside);
  vm.voxels_of_tet.assign(mesh.tet_count(), {});
  for (int idx = 0; idx < nv; ++idx) {
    const Point3 p = vm.voxel_center(idx);
    if (p.x() * p.x() + p.y() * p.y() >= g.radius * g.radius) continue;
    int found = VoxelMap::kOutside;
    for (int t : buckets[idx]) {
      if (tet_contains(mesh, t, p)) {
        found = t;
        break;
      }
    }
    if (found == VoxelMap::kOutside) {
      // Centre lies between the polygonal mesh boundary and the true cylinder.
      double best = 0.0;
      for (int t = 0; t < mesh.tet_count(); ++t) {
        const double d = (centroids[t] - p).squaredNorm();
        if (found == VoxelMap::kOutside || d < best) {
          best = d;
          found = t;
        }
      }
    }
    vm.tet_of_voxel[idx] = found;
    vm.voxels_of_tet[found].push_back(idx);
    vm.column_of_voxel[idx] = static_cast<int>(vm.inside_voxels.size());
    vm.inside_voxels.push_back(idx);
  }

  vm.voxel_of_tet.assign(mesh.tet_count(), VoxelMap::kOutside);
  for (int t = 0; t < mesh.tet_count(); ++t) {
    const auto c = cell_of(centroids[t]);
    int idx = vm.linear(c[0], c[1], c[2]);
    if (!vm.inside(idx)) {
      double best = 0.0;
      int pick = VoxelMap::kOutside;
      for (int dk = -1; dk <= 1; ++dk)
        for (int dj = -2; dj <= 2; ++dj)
          for (int di = -2; di <= 2; ++di) {
            const int i = c[0] + di, j = c[1] + dj, k = c[2] + dk;
            if (i < 0 || j < 0 || k < 0 || i >= dims[0] || j >= dims[1] || k >= dims[2]) continue;
            const int cand = vm.linear(i, j, k);
            if (!vm.inside(cand)) continue;
            const double d = (vm.voxel_center(cand) - centroids[t]).squaredNorm();
            if (pick == VoxelMap::kOutside || d < best) {
              best = d;
              pick = cand;
            }
          }
      if (pick == VoxelMap::kOutside) {
        for (int cand : vm.inside_voxels) {
          const double d = (vm.voxel_center(cand) - centroids[t]).squaredNorm();
          if (pick == VoxelMap::kOutside || d < best) {
            best = d;
            pick = cand;
          }
        }
      }
      idx = pick;
    }
    vm.voxel_of_tet[t] = idx;
  }
  return vm;
}

}  // namespace eit3d
