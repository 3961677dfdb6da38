#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "eit3d/dataset.hpp"
#include "eit3d/volume.hpp"

namespace eit3d {

inline constexpr double kDefaultDataRange = 2.0;
inline constexpr double kPsnrCap = 200.0;

double rmse(std::span<const float> a, std::span<const float> b);
double rmse(const VoxelVolume& a, const VoxelVolume& b);

/// 20 log10(data_range / rmse), capped at kPsnrCap (also for identical inputs).
double psnr(const VoxelVolume& a, const VoxelVolume& b, double data_range = kDefaultDataRange);
double psnr_from_rmse(double rmse, double data_range = kDefaultDataRange);

/// Mean SSIM over every fully contained window x window x window cube.
/// Local statistics are uniform-window means with population (1/N)
/// variances; c1 = (0.01 R)^2, c2 = (0.03 R)^2. dims are (nx, ny, nz), x fastest.
double ssim3d(std::span<const float> a, std::span<const float> b, std::array<int, 3> dims, int window = 7,
              double data_range = kDefaultDataRange);
double ssim3d(const VoxelVolume& a, const VoxelVolume& b, int window = 7, double data_range = kDefaultDataRange);

struct SampleMetrics {
  int index = 0;  // record index in the dataset
  double rmse = 0.0;
  double ssim = 0.0;
  double psnr = 0.0;
  double seconds = 0.0;
  bool ok = true;
  std::string error;
};

struct EvalReport {
  std::string method;
  double noise_snr_db = 30.0;
  std::uint64_t noise_seed = 0;
  std::vector<SampleMetrics> samples;
  // Means over successful samples only.
  double mean_rmse = 0.0;
  double mean_ssim = 0.0;
  double mean_psnr = 0.0;
  double mean_inference_time = 0.0;
  int failures = 0;
  bool concurrent_timing = false;

  void recompute_means();
};

using Reconstructor = std::function<VoxelVolume(std::span<const float> frame)>;

/// For every record in `indices`: add seeded noise (seed derive_seed(seed,
/// record)), time the reconstruction with a steady clock and score it against
/// the stored volume. Reconstructor exceptions are recorded per sample.
EvalReport evaluate_method(const std::string& method, const Reconstructor& reconstruct, const Dataset& ds,
                           const std::vector<int>& indices, double noise_snr_db = 30.0, std::uint64_t seed = 0);

nlohmann::json report_json(const EvalReport& r);
/// Aligned plain-text table with columns Method, RMSE, SSIM, PSNR, Inference Time.
std::string report_table(const std::vector<EvalReport>& reports);

}  // namespace eit3d
