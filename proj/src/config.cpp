#include "eit3d/config.hpp"

#include <cmath>
#include <fstream>

#include "eit3d/binio.hpp"
#include "eit3d/error.hpp"
#include "eit3d/json_io.hpp"

namespace eit3d {

void RunConfig::validate() const {
  geometry.validate();
  for (int c : counts) require(c >= 0, "category counts must be non-negative");
  require(simulation.mesh_resolution >= 6, "mesh resolution must be at least 6");
  require(simulation.background_sigma > 0.0 && simulation.contrast_scale >= 0.0 &&
              simulation.contact_impedance > 0.0 && simulation.current_amplitude > 0.0,
          "simulation constants must be positive");
  architecture.validate();
  train.validate();
  if (baseline.lambda) require(*baseline.lambda >= 0.0, "baseline lambda must be non-negative");
  require(baseline.lambda_factor > 0.0, "baseline lambda factor must be positive");
  require(std::isfinite(eval.noise_snr_db), "evaluation SNR must be finite");
  require(eval.max_samples >= 0, "max_samples must be non-negative");
  require(jobs >= 1, "jobs must be at least 1");
}

Protocol RunConfig::protocol() const {
  if (protocol_file.empty()) return generate_adjacent_protocol(geometry.electrodes_per_ring, 2);
  std::ifstream in(protocol_file);
  if (!in) fail(ErrorKind::Io, "cannot open protocol file '" + protocol_file + "'");
  Protocol p = read_protocol_text(in, protocol_file);
  p.validate(geometry.electrode_count());
  return p;
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  nlohmann::json baseline = {{"lambda_factor", c.baseline.lambda_factor}};
  baseline["lambda"] = c.baseline.lambda ? nlohmann::json(*c.baseline.lambda) : nlohmann::json(nullptr);
  j = nlohmann::json{
      {"geometry", c.geometry},
      {"simulation", c.simulation},
      {"sampling", c.sampling},
      {"protocol_file", c.protocol_file},
      {"counts", c.counts},
      {"seed", c.seed},
      {"architecture", c.architecture},
      {"train", c.train},
      {"baseline", baseline},
      {"eval", {{"noise_snr_db", c.eval.noise_snr_db}, {"seed", c.eval.seed}, {"max_samples", c.eval.max_samples}}},
      {"paths",
       {{"dataset", c.paths.dataset},
        {"checkpoint", c.paths.checkpoint},
        {"history_csv", c.paths.history_csv},
        {"report", c.paths.report}}},
      {"jobs", c.jobs}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  reject_unknown_keys(j, {"geometry", "simulation", "sampling", "protocol_file", "counts", "seed", "architecture",
                          "train", "baseline", "eval", "paths", "jobs"},
                      "config");
  if (j.contains("geometry")) from_json(j.at("geometry"), c.geometry);
  if (j.contains("simulation")) from_json(j.at("simulation"), c.simulation);
  if (j.contains("sampling")) from_json(j.at("sampling"), c.sampling);
  if (j.contains("protocol_file")) c.protocol_file = j.at("protocol_file").get<std::string>();
  if (j.contains("counts")) c.counts = j.at("counts").get<std::array<int, 4>>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("architecture")) from_json(j.at("architecture"), c.architecture);
  if (j.contains("train")) from_json(j.at("train"), c.train);
  if (j.contains("baseline")) {
    const auto& b = j.at("baseline");
    reject_unknown_keys(b, {"lambda", "lambda_factor"}, "baseline");
    if (b.contains("lambda")) {
      if (b.at("lambda").is_null()) c.baseline.lambda.reset();
      else c.baseline.lambda = b.at("lambda").get<double>();
    }
    if (b.contains("lambda_factor")) c.baseline.lambda_factor = b.at("lambda_factor").get<double>();
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    reject_unknown_keys(e, {"noise_snr_db", "seed", "max_samples"}, "eval");
    if (e.contains("noise_snr_db")) c.eval.noise_snr_db = e.at("noise_snr_db").get<double>();
    if (e.contains("seed")) c.eval.seed = e.at("seed").get<std::uint64_t>();
    if (e.contains("max_samples")) c.eval.max_samples = e.at("max_samples").get<int>();
  }
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    reject_unknown_keys(p, {"dataset", "checkpoint", "history_csv", "report"}, "paths");
    if (p.contains("dataset")) c.paths.dataset = p.at("dataset").get<std::string>();
    if (p.contains("checkpoint")) c.paths.checkpoint = p.at("checkpoint").get<std::string>();
    if (p.contains("history_csv")) c.paths.history_csv = p.at("history_csv").get<std::string>();
    if (p.contains("report")) c.paths.report = p.at("report").get<std::string>();
  }
  if (j.contains("jobs")) c.jobs = j.at("jobs").get<int>();
}

RunConfig parse_run_config(const std::string& json_text) {
  RunConfig c;
  if (json_text.empty()) return c;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
    from_json(j, c);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("invalid config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  const auto bytes = binio::read_file(path);
  try {
    return parse_run_config(std::string(bytes.begin(), bytes.end()));
  } catch (const Error& e) {
    fail(e.kind(), path + ": " + e.what());
  }
}

}  // namespace eit3d
