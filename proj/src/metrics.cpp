#include "eit3d/metrics.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "eit3d/error.hpp"
#include "eit3d/rng.hpp"

namespace eit3d {

double rmse(std::span<const float> a, std::span<const float> b) {
  require(a.size() == b.size(), "volume sizes differ: " + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()));
  require(!a.empty(), "rmse of empty volumes");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(a.size()));
}

double rmse(const VoxelVolume& a, const VoxelVolume& b) { return rmse(a.data, b.data); }

double psnr_from_rmse(double e, double data_range) {
  require(data_range > 0.0, "data range must be positive");
  require(e >= 0.0, "rmse must be non-negative");
  if (e == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 20.0 * std::log10(data_range / e));
}

double psnr(const VoxelVolume& a, const VoxelVolume& b, double data_range) {
  return psnr_from_rmse(rmse(a, b), data_range);
}

namespace {

// Summed-volume table with a zero border: t(i, j, k) = sum over [0, i) x [0, j) x [0, k).
struct Integral {
  int nx, ny, nz;
  std::vector<double> t;

  Integral(int x, int y, int z) : nx(x), ny(y), nz(z), t(static_cast<std::size_t>(x + 1) * (y + 1) * (z + 1), 0.0) {}
  double& at(int i, int j, int k) { return t[(static_cast<std::size_t>(k) * (ny + 1) + j) * (nx + 1) + i]; }
  double at(int i, int j, int k) const { return t[(static_cast<std::size_t>(k) * (ny + 1) + j) * (nx + 1) + i]; }

  template <class F>
  void build(F&& value) {
    for (int k = 1; k <= nz; ++k)
      for (int j = 1; j <= ny; ++j)
        for (int i = 1; i <= nx; ++i) {
          at(i, j, k) = value(i - 1, j - 1, k - 1) + at(i - 1, j, k) + at(i, j - 1, k) + at(i, j, k - 1) -
                        at(i - 1, j - 1, k) - at(i - 1, j, k - 1) - at(i, j - 1, k - 1) + at(i - 1, j - 1, k - 1);
        }
  }
  double box(int i, int j, int k, int w) const {
    const int a = i + w, b = j + w, c = k + w;
    return at(a, b, c) - at(i, b, c) - at(a, j, c) - at(a, b, k) + at(i, j, c) + at(i, b, k) + at(a, j, k) -
           at(i, j, k);
  }
};

}  // namespace

double ssim3d(std::span<const float> a, std::span<const float> b, std::array<int, 3> dims, int window,
              double data_range) {
  const auto [nx, ny, nz] = dims;
  require(nx > 0 && ny > 0 && nz > 0, "volume dimensions must be positive");
  const std::size_t n = static_cast<std::size_t>(nx) * ny * nz;
  require(a.size() == n && b.size() == n, "volumes do not match dimensions");
  require(window > 0, "window must be positive");
  require(data_range > 0.0, "data range must be positive");
  if (nx < window || ny < window || nz < window) {
    fail(ErrorKind::InvalidArgument, "volume (" + std::to_string(nx) + ", " + std::to_string(ny) + ", " +
                                         std::to_string(nz) + ") is smaller than the " +
                                         std::to_string(window) + "^3 window");
  }
  auto idx = [&](int i, int j, int k) { return (static_cast<std::size_t>(k) * ny + j) * nx + i; };
  Integral sa(nx, ny, nz), sb(nx, ny, nz), saa(nx, ny, nz), sbb(nx, ny, nz), sab(nx, ny, nz);
  sa.build([&](int i, int j, int k) { return static_cast<double>(a[idx(i, j, k)]); });
  sb.build([&](int i, int j, int k) { return static_cast<double>(b[idx(i, j, k)]); });
  saa.build([&](int i, int j, int k) { const double v = a[idx(i, j, k)]; return v * v; });
  sbb.build([&](int i, int j, int k) { const double v = b[idx(i, j, k)]; return v * v; });
  sab.build([&](int i, int j, int k) { return static_cast<double>(a[idx(i, j, k)]) * b[idx(i, j, k)]; });

  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const double inv_n = 1.0 / (static_cast<double>(window) * window * window);
  double total = 0.0;
  long count = 0;
  for (int k = 0; k + window <= nz; ++k)
    for (int j = 0; j + window <= ny; ++j)
      for (int i = 0; i + window <= nx; ++i) {
        const double ma = sa.box(i, j, k, window) * inv_n;
        const double mb = sb.box(i, j, k, window) * inv_n;
        const double va = saa.box(i, j, k, window) * inv_n - ma * ma;
        const double vb = sbb.box(i, j, k, window) * inv_n - mb * mb;
        const double cov = sab.box(i, j, k, window) * inv_n - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

double ssim3d(const VoxelVolume& a, const VoxelVolume& b, int window, double data_range) {
  return ssim3d(a.data, b.data, {kGridX, kGridY, kGridZ}, window, data_range);
}

void EvalReport::recompute_means() {
  mean_rmse = mean_ssim = mean_psnr = mean_inference_time = 0.0;
  failures = 0;
  int ok = 0;
  for (const SampleMetrics& s : samples) {
    if (!s.ok) {
      ++failures;
      continue;
    }
    ++ok;
    mean_rmse += s.rmse;
    mean_ssim += s.ssim;
    mean_psnr += s.psnr;
    mean_inference_time += s.seconds;
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (ok == 0) {
    mean_rmse = mean_ssim = mean_psnr = mean_inference_time = nan;
    return;
  }
  mean_rmse /= ok;
  mean_ssim /= ok;
  mean_psnr /= ok;
  mean_inference_time /= ok;
}

EvalReport evaluate_method(const std::string& method, const Reconstructor& reconstruct, const Dataset& ds,
                           const std::vector<int>& indices, double noise_snr_db, std::uint64_t seed) {
  require(!indices.empty(), "evaluation needs a non-empty test split");
  EvalReport rep;
  rep.method = method;
  rep.noise_snr_db = noise_snr_db;
  rep.noise_seed = seed;
  for (int i : indices) {
    require(i >= 0 && i < ds.size(), "record index " + std::to_string(i) + " out of range");
    const DatasetRecord& rec = ds.pairs[i];
    SampleMetrics s;
    s.index = i;
    std::vector<float> frame = rec.frame;
    if (std::any_of(frame.begin(), frame.end(), [](float v) { return v != 0.0f; })) {
      frame = add_awgn(std::span<const float>(frame), noise_snr_db, derive_seed(seed, static_cast<std::uint64_t>(i)));
    }
    try {
      const auto t0 = std::chrono::steady_clock::now();
      const VoxelVolume out = reconstruct(frame);
      const auto t1 = std::chrono::steady_clock::now();
      s.seconds = std::max(std::chrono::duration<double>(t1 - t0).count(), 1e-9);
      s.rmse = rmse(out, rec.volume);
      s.psnr = psnr_from_rmse(s.rmse);
      s.ssim = ssim3d(out, rec.volume);
    } catch (const std::exception& e) {
      s.ok = false;
      s.error = e.what();
    }
    rep.samples.push_back(std::move(s));
  }
  rep.recompute_means();
  return rep;
}

namespace {

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json samples = nlohmann::json::array();
  for (const SampleMetrics& s : r.samples) {
    nlohmann::json j{{"index", s.index}, {"ok", s.ok}};
    if (s.ok) {
      j["rmse"] = s.rmse;
      j["ssim"] = s.ssim;
      j["psnr"] = s.psnr;
      j["inference_time"] = s.seconds;
    } else {
      j["error"] = s.error;
    }
    samples.push_back(std::move(j));
  }
  return nlohmann::json{{"method", r.method},
                        {"noise_snr_db", r.noise_snr_db},
                        {"noise_seed", r.noise_seed},
                        {"sample_count", r.samples.size()},
                        {"failures", r.failures},
                        {"mean_rmse", finite_or_null(r.mean_rmse)},
                        {"mean_ssim", finite_or_null(r.mean_ssim)},
                        {"mean_psnr", finite_or_null(r.mean_psnr)},
                        {"mean_inference_time", finite_or_null(r.mean_inference_time)},
                        {"concurrent_timing", r.concurrent_timing},
                        {"samples", samples}};
}

std::string report_table(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-12s %12s %8s %10s %16s\n", "Method", "RMSE", "SSIM", "PSNR", "Inference Time");
  out << line;
  for (const EvalReport& r : reports) {
    std::snprintf(line, sizeof line, "%-12s %12.4e %8.4f %7.3fdB %15.4fs\n", r.method.c_str(), r.mean_rmse,
                  r.mean_ssim, r.mean_psnr, r.mean_inference_time);
    out << line;
    if (r.failures > 0) out << "  (" << r.failures << " of " << r.samples.size() << " samples failed)\n";
    if (r.concurrent_timing) out << "  (timed while other evaluations ran concurrently)\n";
  }
  return out.str();
}

}  // namespace eit3d
