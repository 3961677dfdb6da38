#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "eit3d/baseline_inverse.hpp"
#include "eit3d/config.hpp"
#include "eit3d/metrics.hpp"

namespace eit3d {

enum class LogLevel { Info = 0, Warning = 1 };
using LogFn = std::function<void(LogLevel, const std::string&)>;

/// One-step reconstructor in dataset units: normalized frame in, normalized
/// contrast out (clamped to [-1, 1]).
class OneStepModel {
 public:
  /// Linearizes at the homogeneous background of `simulation`. The reference
  /// frame is simulated when not supplied.
  OneStepModel(const TankGeometry& geometry, const SimulationSettings& simulation, const Protocol& protocol,
               const MeasurementFrame* reference, const BaselineConfig& baseline);

  static OneStepModel from_dataset(const Dataset& ds, const BaselineConfig& baseline);

  VoxelVolume reconstruct(std::span<const float> frame) const;
  double lambda() const { return solver_->lambda(); }
  int frame_length() const { return static_cast<int>(solver_->operator_matrix().cols()); }
  double build_seconds() const { return build_seconds_; }

 private:
  VoxelMap vmap_;
  std::shared_ptr<const OneStepReconstructor> solver_;
  double build_seconds_ = 0.0;
};

/// Frames as text: one frame per non-empty line, values separated by
/// whitespace or commas; '#' starts a comment.
std::vector<std::vector<float>> read_frames_text(const std::string& path);

/// When dry_run is set only the request summary is produced.
nlohmann::json cmd_gen_dataset(const RunConfig& cfg, const std::string& out_path, bool dry_run,
                               const LogFn& log);

/// Writes the best-validation checkpoint and an epoch,train_loss,validation_loss
/// CSV. On divergence the partial CSV is still written before rethrowing.
nlohmann::json cmd_train(const RunConfig& cfg, const std::string& dataset_path, const std::string& checkpoint_path,
                         const std::string& csv_path, const LogFn& log);

struct ReconstructRequest {
  std::string method;            // tn-net | one-step
  std::string frames_path;       // text frames, or
  std::string dataset_path;      // dataset records (also supplies one-step metadata)
  std::vector<int> indices;      // records to use from dataset_path
  std::string checkpoint_path;   // tn-net only
  std::string out_path;          // one frame: this file; several: <stem>_<i><ext>
};

nlohmann::json cmd_reconstruct(const RunConfig& cfg, const ReconstructRequest& req, const LogFn& log);

/// Methods: tn-net, one-step, oracle. Returns {"reports": [...], "table": "..."}.
nlohmann::json cmd_evaluate(const RunConfig& cfg, const std::string& dataset_path,
                            const std::vector<std::string>& methods, const std::string& checkpoint_path,
                            const LogFn& log);

/// Writes slice_<axis><index>.pgm (binary 8-bit graymap, value v mapped to
/// round((v + 1) / 2 * 255) clamped to [0, 255]) and slice_<axis><index>.csv
/// (the raw values, image row order) per index.
nlohmann::json cmd_export_slices(const std::string& volume_path, char axis, const std::vector<int>& indices,
                                 const std::string& out_dir);

/// Wall-clock timings of mesh building, one frame simulation, TN-Net
/// inference (checkpoint, or a freshly initialized network) and one-step
/// reconstruction.
nlohmann::json cmd_bench(const RunConfig& cfg, const std::string& checkpoint_path, int repeats, const LogFn& log);

}  // namespace eit3d
