#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"

#include "eit3d/dataset.hpp"
#include "eit3d/phantom.hpp"
#include "eit3d/tn_net.hpp"
#include "eit3d/training.hpp"

namespace eit3d {

struct BaselineConfig {
  // Unset means the scale-balanced default, lambda_factor * tr(J^T J) / tr(L^T L).
  std::optional<double> lambda;
  double lambda_factor = 1e-3;
};

struct EvalConfig {
  double noise_snr_db = 30.0;
  std::uint64_t seed = 0;
  // Cap on test records; 0 evaluates the whole test split.
  int max_samples = 0;
};

struct PathConfig {
  std::string dataset = "dataset.eit3d";
  std::string checkpoint = "model.tnnet";
  std::string history_csv;  // empty: next to the checkpoint
  std::string report;       // empty: no JSON report file
};

/// Everything a pipeline command needs, serializable as one JSON document.
struct RunConfig {
  TankGeometry geometry;
  SimulationSettings simulation;
  PhantomSampling sampling;
  std::string protocol_file;  // empty: adjacent protocol
  std::array<int, 4> counts{10, 10, 10, 10};
  std::uint64_t seed = 0;
  Architecture architecture = Architecture::desk();
  TrainConfig train;
  BaselineConfig baseline;
  EvalConfig eval;
  PathConfig paths;
  int jobs = 1;

  void validate() const;
  Protocol protocol() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

}  // namespace eit3d
