#include "eit3d/json_io.hpp"

#include <algorithm>

#include "eit3d/error.hpp"

namespace eit3d {

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& context) {
  if (!j.is_object()) fail(ErrorKind::Format, context + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
    if (!ok) fail(ErrorKind::Format, "unknown key '" + key + "' in " + context);
  }
}

namespace {

template <class T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void to_json(nlohmann::json& j, const TankGeometry& g) {
  j = nlohmann::json{{"radius", g.radius},
                     {"height", g.height},
                     {"ring_heights", g.ring_heights},
                     {"electrodes_per_ring", g.electrodes_per_ring},
                     {"electrode_width", g.electrode_width},
                     {"electrode_height", g.electrode_height}};
}

void from_json(const nlohmann::json& j, TankGeometry& g) {
  reject_unknown_keys(j, {"radius", "height", "ring_heights", "electrodes_per_ring", "electrode_width",
                          "electrode_height"},
                      "geometry");
  get_if(j, "radius", g.radius);
  get_if(j, "height", g.height);
  get_if(j, "ring_heights", g.ring_heights);
  get_if(j, "electrodes_per_ring", g.electrodes_per_ring);
  get_if(j, "electrode_width", g.electrode_width);
  get_if(j, "electrode_height", g.electrode_height);
}

void to_json(nlohmann::json& j, const SimulationSettings& s) {
  j = nlohmann::json{{"mesh_resolution", s.mesh_resolution},
                     {"background_sigma", s.background_sigma},
                     {"contrast_scale", s.contrast_scale},
                     {"contact_impedance", s.contact_impedance},
                     {"current_amplitude", s.current_amplitude}};
}

void from_json(const nlohmann::json& j, SimulationSettings& s) {
  reject_unknown_keys(j, {"mesh_resolution", "background_sigma", "contrast_scale", "contact_impedance",
                          "current_amplitude"},
                      "simulation");
  get_if(j, "mesh_resolution", s.mesh_resolution);
  get_if(j, "background_sigma", s.background_sigma);
  get_if(j, "contrast_scale", s.contrast_scale);
  get_if(j, "contact_impedance", s.contact_impedance);
  get_if(j, "current_amplitude", s.current_amplitude);
}

void to_json(nlohmann::json& j, const PhantomSampling& s) {
  j = nlohmann::json{{"min_radius_fraction", s.min_radius_fraction},
                     {"max_radius_fraction", s.max_radius_fraction},
                     {"min_contrast", s.min_contrast},
                     {"max_contrast", s.max_contrast},
                     {"margin_fraction", s.margin_fraction},
                     {"retry_budget", s.retry_budget}};
}

void from_json(const nlohmann::json& j, PhantomSampling& s) {
  reject_unknown_keys(j, {"min_radius_fraction", "max_radius_fraction", "min_contrast", "max_contrast",
                          "margin_fraction", "retry_budget"},
                      "sampling");
  get_if(j, "min_radius_fraction", s.min_radius_fraction);
  get_if(j, "max_radius_fraction", s.max_radius_fraction);
  get_if(j, "min_contrast", s.min_contrast);
  get_if(j, "max_contrast", s.max_contrast);
  get_if(j, "margin_fraction", s.margin_fraction);
  get_if(j, "retry_budget", s.retry_budget);
}

void to_json(nlohmann::json& j, const Protocol& p) {
  nlohmann::json rows = nlohmann::json::array();
  for (const ProtocolRow& r : p.rows) {
    rows.push_back({r.inject_pos + 1, r.inject_neg + 1, r.meas_pos + 1, r.meas_neg + 1});
  }
  j = nlohmann::json{{"id", p.id}, {"rows", rows}};
}

void from_json(const nlohmann::json& j, Protocol& p) {
  reject_unknown_keys(j, {"id", "rows"}, "protocol");
  p.id = j.value("id", std::string("custom"));
  p.rows.clear();
  for (const auto& r : j.at("rows")) {
    const auto v = r.get<std::array<int, 4>>();
    for (int x : v) {
      if (x < 1) fail(ErrorKind::Format, "protocol rows use 1-based electrode indices");
    }
    p.rows.push_back({v[0] - 1, v[1] - 1, v[2] - 1, v[3] - 1});
  }
}

}  // namespace eit3d
