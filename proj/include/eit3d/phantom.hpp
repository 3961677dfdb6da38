#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "eit3d/forward_solver.hpp"
#include "eit3d/mesh.hpp"
#include "eit3d/volume.hpp"

namespace eit3d {

enum class Shape { Sphere, Cuboid, VerticalCylinder, Ellipsoid };

/// Table-style phantom categories: object count and contrast-sign rule.
enum class Category { TwoNegative, TwoMixed, ThreeNegative, ThreeMixed };

inline constexpr std::array<Category, 4> kAllCategories{
    Category::TwoNegative, Category::TwoMixed, Category::ThreeNegative, Category::ThreeMixed};

std::string to_string(Shape s);
std::string to_string(Category c);
Shape shape_from_string(const std::string& s);
Category category_from_string(const std::string& s);
int object_count(Category c);
bool is_mixed(Category c);

/// One inclusion. size holds (radius, -, -) for spheres, half-extents for
/// cuboids, (radius, half-height, -) for vertical cylinders and semi-axes for
/// ellipsoids. rotation is about the z axis through center.
struct PhantomObject {
  Shape shape = Shape::Sphere;
  Point3 center = Point3::Zero();
  std::array<double, 3> size{0.0, 0.0, 0.0};
  double rotation = 0.0;
  double contrast = -0.5;

  bool contains(const Point3& p) const;
  double bounding_radius() const;
};

struct Phantom {
  std::vector<PhantomObject> objects;
  Category category = Category::TwoNegative;

  /// Category sign rules, containment with a 5% radius margin, contrast
  /// magnitudes in [0.2, 1] and bounding-sphere separation.
  void validate(const TankGeometry& geometry) const;
};

struct PhantomSampling {
  double min_radius_fraction = 0.08;
  double max_radius_fraction = 0.25;
  double min_contrast = 0.2;
  double max_contrast = 1.0;
  double margin_fraction = 0.05;
  int retry_budget = 1000;
};

/// Deterministic in (category, seed). Objects are resampled until they fit in
/// the tank and do not overlap; exhausting retry_budget throws.
Phantom sample_phantom(Category category, std::uint64_t seed, const TankGeometry& geometry,
                       const PhantomSampling& sampling = {});

/// Voxel value = contrast of the object containing the voxel centre.
VoxelVolume rasterize_phantom(const Phantom& phantom, const VoxelMap& vmap);

/// Element conductivity = background + contrast * contrast_scale for elements
/// whose centroid lies in an object.
ConductivityField embed_in_mesh(const Phantom& phantom, const Mesh& mesh, double background_sigma,
                                double contrast_scale);

void to_json(nlohmann::json& j, const PhantomObject& o);
void from_json(const nlohmann::json& j, PhantomObject& o);
void to_json(nlohmann::json& j, const Phantom& p);
void from_json(const nlohmann::json& j, Phantom& p);

}  // namespace eit3d
