#include "eit3d/phantom.hpp"

#include <cmath>
#include <numbers>

#include "eit3d/error.hpp"
#include "eit3d/rng.hpp"

namespace eit3d {

std::string to_string(Shape s) {
  switch (s) {
    case Shape::Sphere: return "sphere";
    case Shape::Cuboid: return "cuboid";
    case Shape::VerticalCylinder: return "vertical-cylinder";
    case Shape::Ellipsoid: return "ellipsoid";
  }
  return "?";
}

std::string to_string(Category c) {
  switch (c) {
    case Category::TwoNegative: return "2obj-";
    case Category::TwoMixed: return "2obj+-";
    case Category::ThreeNegative: return "3obj-";
    case Category::ThreeMixed: return "3obj+-";
  }
  return "?";
}

Shape shape_from_string(const std::string& s) {
  for (Shape x : {Shape::Sphere, Shape::Cuboid, Shape::VerticalCylinder, Shape::Ellipsoid}) {
    if (to_string(x) == s) return x;
  }
  fail(ErrorKind::Format, "unknown shape '" + s + "'");
}

Category category_from_string(const std::string& s) {
  for (Category c : kAllCategories) {
    if (to_string(c) == s) return c;
  }
  fail(ErrorKind::Format, "unknown phantom category '" + s + "' (expected 2obj-, 2obj+-, 3obj-, 3obj+-)");
}

int object_count(Category c) {
  return (c == Category::TwoNegative || c == Category::TwoMixed) ? 2 : 3;
}

bool is_mixed(Category c) { return c == Category::TwoMixed || c == Category::ThreeMixed; }

bool PhantomObject::contains(const Point3& p) const {
  const Point3 q = p - center;
  const double cs = std::cos(rotation), sn = std::sin(rotation);
  const double x = cs * q.x() + sn * q.y();
  const double y = -sn * q.x() + cs * q.y();
  const double z = q.z();
  switch (shape) {
    case Shape::Sphere:
      return x * x + y * y + z * z <= size[0] * size[0];
    case Shape::Cuboid:
      return std::abs(x) <= size[0] && std::abs(y) <= size[1] && std::abs(z) <= size[2];
    case Shape::VerticalCylinder:
      return x * x + y * y <= size[0] * size[0] && std::abs(z) <= size[1];
    case Shape::Ellipsoid: {
      const double a = x / size[0], b = y / size[1], c = z / size[2];
      return a * a + b * b + c * c <= 1.0;
    }
  }
  return false;
}

double PhantomObject::bounding_radius() const {
  switch (shape) {
    case Shape::Sphere: return size[0];
    case Shape::Cuboid: return std::sqrt(size[0] * size[0] + size[1] * size[1] + size[2] * size[2]);
    case Shape::VerticalCylinder: return std::hypot(size[0], size[1]);
    case Shape::Ellipsoid: return std::max({size[0], size[1], size[2]});
  }
  return 0.0;
}

void Phantom::validate(const TankGeometry& g) const {
  require(static_cast<int>(objects.size()) == object_count(category),
          "phantom of category " + to_string(category) + " must have " +
              std::to_string(object_count(category)) + " objects");
  bool pos = false, neg = false;
  const double margin = 0.05 * g.radius * (1.0 - 1e-9);
  for (const PhantomObject& o : objects) {
    const double m = std::abs(o.contrast);
    require(m >= 0.2 && m <= 1.0, "object contrast magnitude outside [0.2, 1]");
    pos |= o.contrast > 0.0;
    neg |= o.contrast < 0.0;
    const double b = o.bounding_radius();
    require(std::hypot(o.center.x(), o.center.y()) + b <= g.radius - margin &&
                o.center.z() - b >= margin && o.center.z() + b <= g.height - margin,
            "object does not fit inside the tank with a 5% radius margin");
  }
  if (is_mixed(category)) {
    require(pos && neg, "mixed-contrast phantom needs both signs");
  } else {
    require(!pos, "negative-contrast phantom has a positive object");
  }
  for (std::size_t a = 0; a < objects.size(); ++a)
    for (std::size_t b = a + 1; b < objects.size(); ++b) {
      require((objects[a].center - objects[b].center).norm() >=
                  objects[a].bounding_radius() + objects[b].bounding_radius(),
              "phantom objects overlap");
    }
}

Phantom sample_phantom(Category category, std::uint64_t seed, const TankGeometry& g,
                       const PhantomSampling& s) {
  g.validate();
  Rng rng(seed);
  Phantom ph;
  ph.category = category;
  const int n = object_count(category);

  std::vector<double> signs(n, -1.0);
  if (is_mixed(category)) {
    for (double& x : signs) x = rng.below(2) == 0 ? -1.0 : 1.0;
    bool all_same = true;
    for (double x : signs) all_same &= (x == signs[0]);
    if (all_same) {
      const auto k = rng.below(static_cast<std::uint64_t>(n));
      signs[k] = -signs[k];
    }
  }

  const double r_tank = g.radius;
  const double margin = s.margin_fraction * r_tank;
  int attempts = 0;
  while (static_cast<int>(ph.objects.size()) < n) {
    if (++attempts > s.retry_budget) {
      fail(ErrorKind::Numeric, "phantom sampling exhausted its retry budget of " +
                                   std::to_string(s.retry_budget) + " attempts");
    }
    PhantomObject o;
    o.shape = static_cast<Shape>(rng.below(4));
    const double rho = rng.uniform(s.min_radius_fraction, s.max_radius_fraction) * r_tank;
    switch (o.shape) {
      case Shape::Sphere:
        o.size = {rho, 0.0, 0.0};
        break;
      case Shape::Cuboid:
        o.size = {rho * rng.uniform(0.6, 1.0), rho * rng.uniform(0.6, 1.0), rho * rng.uniform(0.6, 1.0)};
        break;
      case Shape::VerticalCylinder:
        o.size = {rho, rho * rng.uniform(0.7, 1.5), 0.0};
        break;
      case Shape::Ellipsoid:
        o.size = {rho * rng.uniform(0.6, 1.4), rho * rng.uniform(0.6, 1.4), rho * rng.uniform(0.6, 1.4)};
        break;
    }
    o.rotation = rng.uniform(0.0, std::numbers::pi);
    o.contrast = signs[ph.objects.size()] * rng.uniform(s.min_contrast, s.max_contrast);

    const double b = o.bounding_radius();
    const double r_max = r_tank - margin - b;
    const double z_lo = margin + b;
    const double z_hi = g.height - margin - b;
    if (r_max <= 0.0 || z_hi <= z_lo) continue;
    const double rr = r_max * std::sqrt(rng.uniform());
    const double th = rng.uniform(0.0, 2.0 * std::numbers::pi);
    o.center = Point3(rr * std::cos(th), rr * std::sin(th), rng.uniform(z_lo, z_hi));

    bool clear = true;
    for (const PhantomObject& other : ph.objects) {
      if ((other.center - o.center).norm() < other.bounding_radius() + b) clear = false;
    }
    if (clear) ph.objects.push_back(o);
  }
  return ph;
}

VoxelVolume rasterize_phantom(const Phantom& phantom, const VoxelMap& vmap) {
  VoxelVolume v;
  for (int idx : vmap.inside_voxels) {
    const Point3 p = vmap.voxel_center(idx);
    for (const PhantomObject& o : phantom.objects) {
      if (o.contains(p)) v.data[idx] = static_cast<float>(o.contrast);
    }
  }
  return v;
}

ConductivityField embed_in_mesh(const Phantom& phantom, const Mesh& mesh, double background_sigma,
                                double contrast_scale) {
  require(std::isfinite(background_sigma) && background_sigma > 0.0,
          "background conductivity must be positive");
  ConductivityField f = ConductivityField::homogeneous(mesh, background_sigma);
  for (const PhantomObject& o : phantom.objects) {
    const double s = background_sigma + o.contrast * contrast_scale;
    if (!(s > 0.0)) {
      fail(ErrorKind::InvalidArgument,
           "object contrast " + std::to_string(o.contrast) + " with scale " +
               std::to_string(contrast_scale) + " gives non-positive conductivity " + std::to_string(s));
    }
  }
  for (int t = 0; t < mesh.tet_count(); ++t) {
    const Point3 c = mesh.tet_centroid(t);
    for (const PhantomObject& o : phantom.objects) {
      if (o.contains(c)) f.per_element_sigma[t] = background_sigma + o.contrast * contrast_scale;
    }
  }
  return f;
}

void to_json(nlohmann::json& j, const PhantomObject& o) {
  j = nlohmann::json{{"shape", to_string(o.shape)},
                     {"center", {o.center.x(), o.center.y(), o.center.z()}},
                     {"size", o.size},
                     {"rotation", o.rotation},
                     {"contrast", o.contrast}};
}

void from_json(const nlohmann::json& j, PhantomObject& o) {
  o.shape = shape_from_string(j.at("shape").get<std::string>());
  const auto c = j.at("center").get<std::array<double, 3>>();
  o.center = Point3(c[0], c[1], c[2]);
  o.size = j.at("size").get<std::array<double, 3>>();
  o.rotation = j.at("rotation").get<double>();
  o.contrast = j.at("contrast").get<double>();
}

void to_json(nlohmann::json& j, const Phantom& p) {
  j = nlohmann::json{{"category", to_string(p.category)}, {"objects", p.objects}};
}

void from_json(const nlohmann::json& j, Phantom& p) {
  p.category = category_from_string(j.at("category").get<std::string>());
  p.objects = j.at("objects").get<std::vector<PhantomObject>>();
}

}  // namespace eit3d
