#pragma once

#include <initializer_list>
#include <string>

#include "json.hpp"

#include "eit3d/dataset.hpp"
#include "eit3d/forward_solver.hpp"
#include "eit3d/mesh.hpp"

namespace eit3d {

/// Throws Format naming the first key of `j` not in `allowed`.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& context);

// Missing keys keep their defaults; unknown keys are rejected.
void to_json(nlohmann::json& j, const TankGeometry& g);
void from_json(const nlohmann::json& j, TankGeometry& g);
void to_json(nlohmann::json& j, const SimulationSettings& s);
void from_json(const nlohmann::json& j, SimulationSettings& s);
void to_json(nlohmann::json& j, const PhantomSampling& s);
void from_json(const nlohmann::json& j, PhantomSampling& s);

/// Protocols serialize as {"id": ..., "rows": [[ip, in, mp, mn], ...]} with
/// 1-based electrode indices, matching the text format.
void to_json(nlohmann::json& j, const Protocol& p);
void from_json(const nlohmann::json& j, Protocol& p);

}  // namespace eit3d
