#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "eit3d/forward_solver.hpp"
#include "eit3d/mesh.hpp"
#include "eit3d/phantom.hpp"
#include "eit3d/volume.hpp"

namespace eit3d {

/// Relative time-difference normalization (v - v_ref) / |v_ref|.
/// Throws InvalidArgument on a length mismatch or a zero reference entry.
std::vector<double> normalize_frame(const MeasurementFrame& v, const MeasurementFrame& v_ref);

/// Additive white Gaussian noise with variance mean(x^2) / 10^(snr_db / 10).
/// Deterministic in (x, snr_db, seed); throws on an all-zero signal.
std::vector<double> add_awgn(std::span<const double> x, double snr_db, std::uint64_t seed);
std::vector<float> add_awgn(std::span<const float> x, double snr_db, std::uint64_t seed);

/// Physical constants used to turn phantoms into frames.
struct SimulationSettings {
  int mesh_resolution = 16;
  double background_sigma = 1.0;
  double contrast_scale = 0.5;
  double contact_impedance = 1e-3;
  double current_amplitude = 1e-3;

  friend bool operator==(const SimulationSettings&, const SimulationSettings&) = default;
};

struct DatasetRecord {
  std::vector<float> frame;
  VoxelVolume volume;
  Phantom phantom;
  std::uint64_t seed = 0;
};

struct DatasetSplit {
  std::vector<int> train;
  std::vector<int> validation;
  std::vector<int> test;
};

/// Clean (noise-free) normalized frames paired with voxel ground truth.
struct Dataset {
  TankGeometry geometry;
  SimulationSettings simulation;
  Protocol protocol;
  std::array<int, 4> counts{0, 0, 0, 0};
  std::uint64_t master_seed = 0;
  MeasurementFrame reference_frame;
  std::vector<DatasetRecord> pairs;
  DatasetSplit split;

  int size() const { return static_cast<int>(pairs.size()); }
  int frame_length() const { return protocol.size(); }
};

/// Deterministic 80/10/10 shuffle split (validation and test sizes rounded).
DatasetSplit make_split(int n, std::uint64_t master_seed);

struct GenerationRequest {
  std::array<int, 4> counts{0, 0, 0, 0};
  std::uint64_t master_seed = 0;
  TankGeometry geometry;
  SimulationSettings simulation;
  PhantomSampling sampling;
  Protocol protocol = generate_adjacent_protocol();
  int jobs = 1;
  int max_resamples = 10;
};

/// Category blocks are generated in Category order; record i uses the seed
/// derive_seed(master_seed, i) (re-derived on resampling). Output does not
/// depend on the number of worker threads.
Dataset generate_dataset(const GenerationRequest& request, const Mesh& mesh, const VoxelMap& vmap);
Dataset generate_dataset(const GenerationRequest& request);

/// Layout: "EIT3DSET", u32 version, u64 metadata length, UTF-8 JSON metadata,
/// then per record frame_length f32, 40960 f32 and a CRC-32 of those bytes.
/// All integers and floats little-endian.
inline constexpr std::uint32_t kDatasetVersion = 1;
std::vector<std::uint8_t> encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

/// 40960 little-endian f32, the dataset's volume payload layout.
void write_volume(const VoxelVolume& v, const std::string& path);
VoxelVolume read_volume(const std::string& path);

}  // namespace eit3d
