#include "eit3d/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "eit3d/checkpoint.hpp"
#include "eit3d/error.hpp"
#include "eit3d/rng.hpp"

namespace eit3d {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void say(const LogFn& log, const std::string& msg) {
  if (log) log(LogLevel::Info, msg);
}

std::string fmt(double v, int digits = 6) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot open '" + path + "' for writing");
  out << text;
  if (!out) fail(ErrorKind::Io, "failed writing '" + path + "'");
}

std::string history_csv(const std::vector<EpochLoss>& history) {
  std::ostringstream os;
  os << "epoch,train_loss,validation_loss\n" << std::setprecision(9);
  for (const EpochLoss& e : history) os << e.epoch << ',' << e.train << ',' << e.validation << '\n';
  return os.str();
}

GenerationRequest generation_request(const RunConfig& cfg) {
  GenerationRequest req;
  req.counts = cfg.counts;
  req.master_seed = cfg.seed;
  req.geometry = cfg.geometry;
  req.simulation = cfg.simulation;
  req.sampling = cfg.sampling;
  req.protocol = cfg.protocol();
  req.jobs = cfg.jobs;
  return req;
}

std::string numbered_path(const std::string& path, std::size_t i, std::size_t n) {
  if (n == 1) return path;
  const std::filesystem::path p(path);
  std::ostringstream name;
  name << p.stem().string() << '_' << std::setw(4) << std::setfill('0') << i << p.extension().string();
  return (p.parent_path() / name.str()).string();
}

}  // namespace

OneStepModel::OneStepModel(const TankGeometry& geometry, const SimulationSettings& simulation,
                           const Protocol& protocol, const MeasurementFrame* reference,
                           const BaselineConfig& baseline) {
  const auto t0 = Clock::now();
  const Mesh mesh = build_tank_mesh(geometry, simulation.mesh_resolution);
  vmap_ = build_voxel_map(mesh, geometry);
  const ElectrodeModel electrodes = ElectrodeModel::uniform(geometry.electrode_count(), simulation.contact_impedance);
  const ConductivityField sigma = ConductivityField::homogeneous(mesh, simulation.background_sigma);
  MeasurementFrame ref;
  if (reference) {
    require(static_cast<int>(reference->values.size()) == protocol.size(),
            "reference frame length does not match the protocol");
    ref = *reference;
  } else {
    ref = simulate_frame(mesh, sigma, electrodes, protocol, simulation.current_amplitude);
  }
  const Jacobian jac = compute_jacobian(mesh, sigma, electrodes, protocol, vmap_, simulation.current_amplitude);
  const Eigen::MatrixXd j = normalize_jacobian(jac, ref, simulation.contrast_scale);
  const Regularizer reg = build_laplace_regularizer(vmap_);
  const double lambda = baseline.lambda ? *baseline.lambda : default_lambda(j, reg) * (baseline.lambda_factor / 1e-3);
  solver_ = std::make_shared<const OneStepReconstructor>(j, reg, lambda);
  build_seconds_ = seconds_since(t0);
}

OneStepModel OneStepModel::from_dataset(const Dataset& ds, const BaselineConfig& baseline) {
  return OneStepModel(ds.geometry, ds.simulation, ds.protocol, &ds.reference_frame, baseline);
}

VoxelVolume OneStepModel::reconstruct(std::span<const float> frame) const {
  Eigen::VectorXd dv(static_cast<Eigen::Index>(frame.size()));
  for (std::size_t i = 0; i < frame.size(); ++i) dv[static_cast<Eigen::Index>(i)] = frame[i];
  VoxelVolume v = scatter_to_grid(solver_->solve(dv), vmap_);
  for (float& x : v.data) x = std::clamp(x, -1.0f, 1.0f);
  return v;
}

std::vector<std::vector<float>> read_frames_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open frame file '" + path + "'");
  std::vector<std::vector<float>> frames;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::vector<float> f;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        const float v = std::stof(tok, &used);
        if (used != tok.size() || !std::isfinite(v)) throw std::invalid_argument(tok);
        f.push_back(v);
      } catch (const std::exception&) {
        fail(ErrorKind::Format, path + ":" + std::to_string(lineno) + ": not a finite number: '" + tok + "'");
      }
    }
    if (!f.empty()) frames.push_back(std::move(f));
  }
  if (frames.empty()) fail(ErrorKind::Format, "frame file '" + path + "' contains no frames");
  return frames;
}

nlohmann::json cmd_gen_dataset(const RunConfig& cfg, const std::string& out_path, bool dry_run, const LogFn& log) {
  cfg.validate();
  nlohmann::json summary{{"counts",
                          {{to_string(Category::TwoNegative), cfg.counts[0]},
                           {to_string(Category::TwoMixed), cfg.counts[1]},
                           {to_string(Category::ThreeNegative), cfg.counts[2]},
                           {to_string(Category::ThreeMixed), cfg.counts[3]}}},
                         {"total", cfg.counts[0] + cfg.counts[1] + cfg.counts[2] + cfg.counts[3]},
                         {"seed", cfg.seed},
                         {"mesh_resolution", cfg.simulation.mesh_resolution},
                         {"path", out_path}};
  if (dry_run) return summary;
  require(!out_path.empty(), "no output path for the dataset");
  say(log, "generating " + std::to_string(summary["total"].get<int>()) + " records with " +
               std::to_string(cfg.jobs) + " worker(s)");
  const auto t0 = Clock::now();
  const GenerationRequest req = generation_request(cfg);
  const Mesh mesh = build_tank_mesh(req.geometry, req.simulation.mesh_resolution);
  const VoxelMap vmap = build_voxel_map(mesh, req.geometry);
  say(log, "mesh: " + std::to_string(mesh.node_count()) + " nodes, " + std::to_string(mesh.tet_count()) + " tets");
  const Dataset ds = generate_dataset(req, mesh, vmap);
  const double gen_s = seconds_since(t0);
  write_dataset(ds, out_path);
  summary["split"] = {{"train", ds.split.train.size()},
                      {"validation", ds.split.validation.size()},
                      {"test", ds.split.test.size()}};
  summary["seconds"] = gen_s;
  summary["seconds_per_record"] = ds.pairs.empty() ? 0.0 : gen_s / static_cast<double>(ds.pairs.size());
  return summary;
}

nlohmann::json cmd_train(const RunConfig& cfg, const std::string& dataset_path, const std::string& checkpoint_path,
                         const std::string& csv_path, const LogFn& log) {
  cfg.validate();
  require(!checkpoint_path.empty(), "no output path for the checkpoint");
  const Dataset ds = read_dataset(dataset_path);
  Architecture arch = cfg.architecture;
  arch.input_len = ds.frame_length();
  say(log, "training " + arch.preset + " network on " + std::to_string(ds.split.train.size()) + " records, " +
               std::to_string(cfg.train.epochs) + " epochs, batch " + std::to_string(cfg.train.batch_size));
  const auto t0 = Clock::now();
  TrainedModel model = [&] {
    try {
      return train_model(ds, arch, cfg.train, [&](const EpochLoss& e) {
        say(log, "epoch " + std::to_string(e.epoch) + "  train " + fmt(e.train) + "  val " + fmt(e.validation));
      });
    } catch (const TrainingDiverged& e) {
      if (!csv_path.empty()) write_text(csv_path, history_csv(e.history()));
      throw;
    }
  }();
  const double secs = seconds_since(t0);
  save_checkpoint(model, checkpoint_path);
  if (!csv_path.empty()) write_text(csv_path, history_csv(model.history));
  nlohmann::json summary{{"checkpoint", checkpoint_path},
                         {"history_csv", csv_path},
                         {"epochs", model.history.size()},
                         {"best_epoch", model.best_epoch},
                         {"seconds", secs}};
  if (model.best_epoch > 0) summary["best_validation_loss"] = model.history[model.best_epoch - 1].validation;
  return summary;
}

nlohmann::json cmd_reconstruct(const RunConfig& cfg, const ReconstructRequest& req, const LogFn& log) {
  require(req.method == "tn-net" || req.method == "one-step",
          "unknown method '" + req.method + "' (expected tn-net or one-step)");
  require(!req.out_path.empty(), "no output path for the volume");
  require(!req.frames_path.empty() || !req.dataset_path.empty(), "give a frame file or a dataset");

  std::optional<Dataset> ds;
  if (!req.dataset_path.empty()) ds = read_dataset(req.dataset_path);
  std::vector<std::vector<float>> frames;
  if (!req.frames_path.empty()) {
    frames = read_frames_text(req.frames_path);
  } else {
    require(!req.indices.empty(), "no record indices given for the dataset");
    for (int i : req.indices) {
      require(i >= 0 && i < ds->size(), "record index " + std::to_string(i) + " is out of range [0, " +
                                            std::to_string(ds->size()) + ")");
      frames.push_back(ds->pairs[i].frame);
    }
  }

  std::function<VoxelVolume(std::span<const float>)> recon;
  std::optional<TrainedModel> model;
  std::optional<OneStepModel> one_step;
  int expected = 0;
  if (req.method == "tn-net") {
    require(!req.checkpoint_path.empty(), "tn-net needs a checkpoint");
    model = load_checkpoint(req.checkpoint_path);
    expected = model->network.arch().input_len;
    recon = [&](std::span<const float> f) { return reconstruct(model->network, f); };
  } else {
    if (ds) {
      one_step.emplace(OneStepModel::from_dataset(*ds, cfg.baseline));
    } else {
      one_step.emplace(cfg.geometry, cfg.simulation, cfg.protocol(), nullptr, cfg.baseline);
    }
    say(log, "one-step operator built in " + fmt(one_step->build_seconds(), 3) + " s (lambda " +
                 fmt(one_step->lambda()) + ")");
    expected = one_step->frame_length();
    recon = [&](std::span<const float> f) { return one_step->reconstruct(f); };
  }

  nlohmann::json outputs = nlohmann::json::array();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    require(static_cast<int>(frames[i].size()) == expected,
            "frame " + std::to_string(i) + " has " + std::to_string(frames[i].size()) + " values, expected " +
                std::to_string(expected));
    const auto t0 = Clock::now();
    const VoxelVolume v = recon(frames[i]);
    const double secs = seconds_since(t0);
    const std::string path = numbered_path(req.out_path, i, frames.size());
    write_volume(v, path);
    say(log, path + ": " + fmt(secs * 1e3, 4) + " ms");
    outputs.push_back({{"path", path}, {"seconds", secs}});
  }
  return nlohmann::json{{"method", req.method}, {"volumes", outputs}};
}

nlohmann::json cmd_evaluate(const RunConfig& cfg, const std::string& dataset_path,
                            const std::vector<std::string>& methods, const std::string& checkpoint_path,
                            const LogFn& log) {
  require(!methods.empty(), "no methods to evaluate");
  const Dataset ds = read_dataset(dataset_path);
  std::vector<int> indices = ds.split.test;
  require(!indices.empty(), "the dataset's test split is empty");
  if (cfg.eval.max_samples > 0 && static_cast<int>(indices.size()) > cfg.eval.max_samples) {
    indices.resize(static_cast<std::size_t>(cfg.eval.max_samples));
  }

  std::vector<EvalReport> reports;
  for (const std::string& m : methods) {
    Reconstructor recon;
    std::optional<TrainedModel> model;
    std::optional<OneStepModel> one_step;
    if (m == "tn-net") {
      require(!checkpoint_path.empty(), "tn-net needs a checkpoint");
      model = load_checkpoint(checkpoint_path);
      recon = [&](std::span<const float> f) { return reconstruct(model->network, f); };
    } else if (m == "one-step") {
      one_step.emplace(OneStepModel::from_dataset(ds, cfg.baseline));
      say(log, "one-step operator built in " + fmt(one_step->build_seconds(), 3) + " s");
      recon = [&](std::span<const float> f) { return one_step->reconstruct(f); };
    } else if (m == "oracle") {
      // evaluate_method visits the records in order, so a cursor finds the ground truth.
      recon = [&, next = std::size_t{0}](std::span<const float>) mutable { return ds.pairs[indices[next++]].volume; };
    } else {
      fail(ErrorKind::InvalidArgument, "unknown method '" + m + "' (expected tn-net, one-step or oracle)");
    }
    say(log, "evaluating " + m + " on " + std::to_string(indices.size()) + " test records");
    reports.push_back(evaluate_method(m, recon, ds, indices, cfg.eval.noise_snr_db, cfg.eval.seed));
    if (reports.back().failures > 0) {
      if (log) log(LogLevel::Warning, m + ": " + std::to_string(reports.back().failures) + " sample(s) failed");
    }
  }
  nlohmann::json out{{"reports", nlohmann::json::array()}, {"table", report_table(reports)}};
  for (const EvalReport& r : reports) out["reports"].push_back(report_json(r));
  if (!cfg.paths.report.empty()) write_text(cfg.paths.report, out["reports"].dump(2) + "\n");
  return out;
}

nlohmann::json cmd_export_slices(const std::string& volume_path, char axis, const std::vector<int>& indices,
                                 const std::string& out_dir) {
  require(axis == 'x' || axis == 'y' || axis == 'z', std::string("axis must be x, y or z, got '") + axis + "'");
  require(!indices.empty(), "no slice indices given");
  const VoxelVolume v = read_volume(volume_path);
  const int extent = axis == 'x' ? kGridX : axis == 'y' ? kGridY : kGridZ;
  for (int idx : indices) {
    require(idx >= 0 && idx < extent, "slice index " + std::to_string(idx) + " is out of range [0, " +
                                          std::to_string(extent) + ") along " + axis);
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create '" + out_dir + "': " + ec.message());

  // Image columns run along the first remaining axis, rows along the second.
  const int width = axis == 'x' ? kGridY : kGridX;
  const int height = axis == 'z' ? kGridY : kGridZ;
  nlohmann::json files = nlohmann::json::array();
  for (int idx : indices) {
    auto value = [&](int c, int r) {
      if (axis == 'x') return v.at(idx, c, r);
      if (axis == 'y') return v.at(c, idx, r);
      return v.at(c, r, idx);
    };
    const std::string stem = (std::filesystem::path(out_dir) / ("slice_" + std::string(1, axis) +
                                                                  std::to_string(idx))).string();
    std::string pgm = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    std::ostringstream csv;
    csv << std::setprecision(9);
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        const float x = value(c, r);
        const double g = std::round((static_cast<double>(x) + 1.0) * 0.5 * 255.0);
        pgm.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(g, 0.0, 255.0))));
        csv << (c ? "," : "") << x;
      }
      csv << '\n';
    }
    write_text(stem + ".pgm", pgm);
    write_text(stem + ".csv", csv.str());
    files.push_back({{"pgm", stem + ".pgm"}, {"csv", stem + ".csv"}});
  }
  return nlohmann::json{{"axis", std::string(1, axis)}, {"width", width}, {"height", height}, {"files", files}};
}

nlohmann::json cmd_bench(const RunConfig& cfg, const std::string& checkpoint_path, int repeats, const LogFn& log) {
  cfg.validate();
  require(repeats >= 1, "repeats must be at least 1");
  nlohmann::json out;
  auto t0 = Clock::now();
  const Mesh mesh = build_tank_mesh(cfg.geometry, cfg.simulation.mesh_resolution);
  out["mesh_seconds"] = seconds_since(t0);
  out["mesh_nodes"] = mesh.node_count();
  out["mesh_tets"] = mesh.tet_count();

  const Protocol protocol = cfg.protocol();
  const ElectrodeModel electrodes =
      ElectrodeModel::uniform(cfg.geometry.electrode_count(), cfg.simulation.contact_impedance);
  const ConductivityField sigma = ConductivityField::homogeneous(mesh, cfg.simulation.background_sigma);
  t0 = Clock::now();
  const MeasurementFrame ref = simulate_frame(mesh, sigma, electrodes, protocol, cfg.simulation.current_amplitude);
  out["simulate_frame_seconds"] = seconds_since(t0);
  say(log, "forward frame: " + fmt(out["simulate_frame_seconds"].get<double>(), 4) + " s");

  Network<float> net = [&] {
    if (!checkpoint_path.empty()) return load_checkpoint(checkpoint_path).network;
    Architecture arch = cfg.architecture;
    arch.input_len = protocol.size();
    Network<float> n(arch);
    n.initialize(cfg.train.seed);
    return n;
  }();
  std::vector<float> frame(static_cast<std::size_t>(net.arch().input_len));
  Rng rng(cfg.seed);
  for (float& f : frame) f = static_cast<float>(0.01 * rng.normal());
  reconstruct(net, frame);  // warm-up
  std::vector<double> times;
  for (int r = 0; r < repeats; ++r) {
    t0 = Clock::now();
    reconstruct(net, frame);
    times.push_back(seconds_since(t0));
  }
  std::sort(times.begin(), times.end());
  out["tn_net"] = {{"preset", net.arch().preset},
                   {"median_seconds", times[times.size() / 2]},
                   {"min_seconds", times.front()},
                   {"repeats", repeats}};
  say(log, "tn-net inference: " + fmt(times[times.size() / 2] * 1e3, 4) + " ms (median)");

  const OneStepModel os(cfg.geometry, cfg.simulation, protocol, &ref, cfg.baseline);
  if (static_cast<int>(frame.size()) == os.frame_length()) {
    times.clear();
    for (int r = 0; r < repeats; ++r) {
      t0 = Clock::now();
      os.reconstruct(frame);
      times.push_back(seconds_since(t0));
    }
    std::sort(times.begin(), times.end());
    out["one_step"] = {{"build_seconds", os.build_seconds()}, {"median_seconds", times[times.size() / 2]}};
    say(log, "one-step reconstruction: " + fmt(times[times.size() / 2] * 1e3, 4) + " ms (median)");
  }
  return out;
}

}  // namespace eit3d
