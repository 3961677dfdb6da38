#include "eit3d/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "eit3d/binio.hpp"
#include "eit3d/error.hpp"
#include "eit3d/json_io.hpp"
#include "eit3d/rng.hpp"

namespace eit3d {

std::vector<double> normalize_frame(const MeasurementFrame& v, const MeasurementFrame& v_ref) {
  require(v.values.size() == v_ref.values.size(),
          "frame length " + std::to_string(v.values.size()) + " does not match reference length " +
              std::to_string(v_ref.values.size()));
  std::vector<double> out(v.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double r = v_ref.values[i];
    if (r == 0.0) {
      fail(ErrorKind::InvalidArgument,
           "reference frame row " + std::to_string(i + 1) + " is zero; cannot normalize");
    }
    out[i] = (v.values[i] - r) / std::abs(r);
  }
  return out;
}

namespace {

template <class T>
std::vector<T> awgn_impl(std::span<const T> x, double snr_db, std::uint64_t seed) {
  require(std::isfinite(snr_db), "SNR must be finite");
  require(!x.empty(), "cannot add noise to an empty signal");
  double power = 0.0;
  for (T v : x) power += static_cast<double>(v) * static_cast<double>(v);
  power /= static_cast<double>(x.size());
  if (!(power > 0.0)) fail(ErrorKind::InvalidArgument, "SNR is undefined for an all-zero signal");
  const double stddev = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  Rng rng(seed);
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = static_cast<T>(static_cast<double>(x[i]) + stddev * rng.normal());
  }
  return y;
}

}  // namespace

std::vector<double> add_awgn(std::span<const double> x, double snr_db, std::uint64_t seed) {
  return awgn_impl(x, snr_db, seed);
}

std::vector<float> add_awgn(std::span<const float> x, double snr_db, std::uint64_t seed) {
  return awgn_impl(x, snr_db, seed);
}

DatasetSplit make_split(int n, std::uint64_t master_seed) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  Rng rng(derive_seed(master_seed, 0x5350'4C49'54ULL));
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(idx[i], idx[j]);
  }
  const int n_val = static_cast<int>(std::lround(0.1 * n));
  const int n_test = static_cast<int>(std::lround(0.1 * n));
  const int n_train = n - n_val - n_test;
  DatasetSplit s;
  s.train.assign(idx.begin(), idx.begin() + n_train);
  s.validation.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  s.test.assign(idx.begin() + n_train + n_val, idx.end());
  for (auto* v : {&s.train, &s.validation, &s.test}) std::sort(v->begin(), v->end());
  return s;
}

Dataset generate_dataset(const GenerationRequest& req, const Mesh& mesh, const VoxelMap& vmap) {
  for (int c : req.counts) require(c >= 0, "category counts must be non-negative");
  const ElectrodeModel electrodes =
      ElectrodeModel::uniform(req.geometry.electrode_count(), req.simulation.contact_impedance);
  req.protocol.validate(electrodes.count());

  Dataset ds;
  ds.geometry = req.geometry;
  ds.simulation = req.simulation;
  ds.protocol = req.protocol;
  ds.counts = req.counts;
  ds.master_seed = req.master_seed;
  ds.reference_frame =
      simulate_frame(mesh, ConductivityField::homogeneous(mesh, req.simulation.background_sigma),
                     electrodes, req.protocol, req.simulation.current_amplitude);

  std::vector<Category> cats;
  for (int k = 0; k < 4; ++k) cats.insert(cats.end(), req.counts[k], kAllCategories[k]);
  const int n = static_cast<int>(cats.size());
  ds.pairs.resize(n);

  std::vector<std::string> errors(n);
  auto work = [&](int i) {
    for (int attempt = 0; attempt <= req.max_resamples; ++attempt) {
      const std::uint64_t seed = attempt == 0 ? derive_seed(req.master_seed, i)
                                              : derive_seed(req.master_seed, i, attempt);
      try {
        DatasetRecord rec;
        rec.seed = seed;
        rec.phantom = sample_phantom(cats[i], seed, req.geometry, req.sampling);
        const ConductivityField sigma = embed_in_mesh(rec.phantom, mesh, req.simulation.background_sigma,
                                                      req.simulation.contrast_scale);
        const MeasurementFrame frame = simulate_frame(mesh, sigma, electrodes, req.protocol,
                                                      req.simulation.current_amplitude);
        const std::vector<double> dv = normalize_frame(frame, ds.reference_frame);
        rec.frame.assign(dv.begin(), dv.end());
        rec.volume = rasterize_phantom(rec.phantom, vmap);
        ds.pairs[i] = std::move(rec);
        return;
      } catch (const Error& e) {
        errors[i] = e.what();
      }
    }
  };

  const int jobs = std::max(1, std::min(req.jobs, n));
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < jobs; ++w) {
      pool.emplace_back([&, w] {
        for (int i = w; i < n; i += jobs) work(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (int i = 0; i < n; ++i) {
    if (ds.pairs[i].frame.empty()) {
      fail(ErrorKind::Numeric, "record " + std::to_string(i) + " failed after " +
                                   std::to_string(req.max_resamples + 1) + " attempts: " + errors[i]);
    }
  }
  ds.split = make_split(n, req.master_seed);
  return ds;
}

Dataset generate_dataset(const GenerationRequest& req) {
  const Mesh mesh = build_tank_mesh(req.geometry, req.simulation.mesh_resolution);
  const VoxelMap vmap = build_voxel_map(mesh, req.geometry);
  return generate_dataset(req, mesh, vmap);
}

namespace {

constexpr char kDatasetMagic[8] = {'E', 'I', 'T', '3', 'D', 'S', 'E', 'T'};

nlohmann::json metadata(const Dataset& ds) {
  nlohmann::json provenance = nlohmann::json::array();
  for (const DatasetRecord& r : ds.pairs) {
    provenance.push_back({{"seed", r.seed}, {"phantom", r.phantom}});
  }
  return nlohmann::json{{"record_count", ds.pairs.size()},
                        {"frame_length", ds.frame_length()},
                        {"grid", {kGridX, kGridY, kGridZ}},
                        {"master_seed", ds.master_seed},
                        {"counts", ds.counts},
                        {"geometry", ds.geometry},
                        {"simulation", ds.simulation},
                        {"protocol", ds.protocol},
                        {"reference_frame", ds.reference_frame.values},
                        {"split",
                         {{"train", ds.split.train},
                          {"validation", ds.split.validation},
                          {"test", ds.split.test}}},
                        {"provenance", provenance}};
}

}  // namespace

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  const int flen = ds.frame_length();
  for (const DatasetRecord& r : ds.pairs) {
    require(static_cast<int>(r.frame.size()) == flen, "record frame length does not match protocol");
    require(r.volume.data.size() == static_cast<std::size_t>(kVoxelCount), "record volume has wrong size");
  }
  const std::string meta = metadata(ds).dump();
  binio::Writer w;
  w.bytes(kDatasetMagic, 8);
  w.u32(kDatasetVersion);
  w.u64(meta.size());
  w.bytes(meta.data(), meta.size());
  for (const DatasetRecord& r : ds.pairs) {
    binio::Writer rec;
    rec.f32s(r.frame);
    rec.f32s(r.volume.data);
    w.bytes(rec.buffer().data(), rec.size());
    w.u32(binio::crc32(rec.buffer()));
  }
  return w.buffer();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes, "dataset file");
  const auto magic = r.take(8);
  if (!std::equal(magic.begin(), magic.end(), kDatasetMagic)) {
    fail(ErrorKind::Format, "not a dataset file (bad magic bytes)");
  }
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    fail(ErrorKind::Format, "unsupported dataset version " + std::to_string(version) + " (expected " +
                                std::to_string(kDatasetVersion) + ")");
  }
  const std::uint64_t meta_len = r.u64();
  if (meta_len > r.remaining()) fail(ErrorKind::Format, "dataset file is truncated inside the metadata block");
  const auto meta_bytes = r.take(static_cast<std::size_t>(meta_len));
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_bytes.begin(), meta_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("dataset metadata is not valid JSON: ") + e.what());
  }

  Dataset ds;
  std::size_t count = 0;
  try {
    count = meta.at("record_count").get<std::size_t>();
    ds.master_seed = meta.at("master_seed").get<std::uint64_t>();
    ds.counts = meta.at("counts").get<std::array<int, 4>>();
    ds.geometry = meta.at("geometry").get<TankGeometry>();
    ds.simulation = meta.at("simulation").get<SimulationSettings>();
    ds.protocol = meta.at("protocol").get<Protocol>();
    ds.reference_frame.values = meta.at("reference_frame").get<std::vector<double>>();
    ds.reference_frame.protocol_id = ds.protocol.id;
    const auto& split = meta.at("split");
    ds.split.train = split.at("train").get<std::vector<int>>();
    ds.split.validation = split.at("validation").get<std::vector<int>>();
    ds.split.test = split.at("test").get<std::vector<int>>();
    const auto& prov = meta.at("provenance");
    if (prov.size() != count) fail(ErrorKind::Format, "provenance list does not match record count");
    ds.pairs.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      ds.pairs[i].seed = prov[i].at("seed").get<std::uint64_t>();
      ds.pairs[i].phantom = prov[i].at("phantom").get<Phantom>();
    }
    if (meta.at("frame_length").get<int>() != ds.frame_length()) {
      fail(ErrorKind::Format, "frame_length disagrees with the stored protocol");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("malformed dataset metadata: ") + e.what());
  }

  const std::size_t flen = static_cast<std::size_t>(ds.frame_length());
  const std::size_t rec_bytes = 4 * (flen + kVoxelCount);
  if (r.remaining() != count * (rec_bytes + 4)) {
    fail(ErrorKind::Format, "dataset payload has " + std::to_string(r.remaining()) + " bytes, expected " +
                                std::to_string(count * (rec_bytes + 4)) + " for " + std::to_string(count) +
                                " records (truncated or padded file)");
  }
  for (std::size_t i = 0; i < count; ++i) {
    const auto payload = r.take(rec_bytes);
    const std::uint32_t stored = r.u32();
    if (binio::crc32(payload) != stored) {
      fail(ErrorKind::Format, "checksum mismatch in dataset record " + std::to_string(i));
    }
    binio::Reader pr(payload, "dataset record");
    ds.pairs[i].frame.resize(flen);
    pr.f32s(ds.pairs[i].frame);
    pr.f32s(ds.pairs[i].volume.data);
  }

  const std::size_t n = count;
  std::vector<int> seen(n, 0);
  for (const auto* v : {&ds.split.train, &ds.split.validation, &ds.split.test}) {
    for (int i : *v) {
      if (i < 0 || static_cast<std::size_t>(i) >= n || seen[i]++) {
        fail(ErrorKind::Format, "dataset split indices are out of range or overlap");
      }
    }
  }
  if (std::count(seen.begin(), seen.end(), 1) != static_cast<std::ptrdiff_t>(n)) {
    fail(ErrorKind::Format, "dataset split does not cover every record");
  }
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& path) {
  binio::write_file(path, encode_dataset(ds));
}

Dataset read_dataset(const std::string& path) { return decode_dataset(binio::read_file(path)); }

void write_volume(const VoxelVolume& v, const std::string& path) {
  binio::Writer w;
  w.f32s(v.data);
  binio::write_file(path, w.buffer());
}

VoxelVolume read_volume(const std::string& path) {
  const auto bytes = binio::read_file(path);
  if (bytes.size() != 4u * kVoxelCount) {
    fail(ErrorKind::Format, "volume file '" + path + "' has " + std::to_string(bytes.size()) +
                                " bytes, expected " + std::to_string(4 * kVoxelCount));
  }
  binio::Reader r(bytes, "volume file");
  VoxelVolume v;
  r.f32s(v.data);
  return v;
}

}  // namespace eit3d
