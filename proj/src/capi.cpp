#include "eit3d/eit3d.h"

#include <cstdlib>
#include <cstring>
#include <mutex>
#include <new>
#include <sstream>
#include <string>

#include "eit3d/checkpoint.hpp"
#include "eit3d/config.hpp"
#include "eit3d/error.hpp"
#include "eit3d/pipeline.hpp"

struct eit3d_model {
  eit3d::TrainedModel model;
};

struct eit3d_one_step {
  eit3d::OneStepModel op;
};

namespace {

thread_local std::string g_last_error;

std::mutex g_log_mutex;
eit3d_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

void emit(eit3d::LogLevel level, const std::string& msg) {
  std::lock_guard lock(g_log_mutex);
  if (g_log_fn) g_log_fn(static_cast<eit3d_log_level>(level), msg.c_str(), g_log_user);
}

const eit3d::LogFn kLog = emit;

eit3d_status to_status(eit3d::ErrorKind k) { return static_cast<eit3d_status>(k); }

template <class F>
eit3d_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return EIT3D_OK;
  } catch (const eit3d::Error& e) {
    g_last_error = e.what();
    return to_status(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return EIT3D_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return EIT3D_ERR_INTERNAL;
  }
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

void put(char** out, const std::string& s) {
  if (out) *out = dup(s);
}

std::string str(const char* s) { return s ? std::string(s) : std::string(); }

eit3d::RunConfig config(const char* json) { return eit3d::parse_run_config(str(json)); }

void need(const void* p, const char* what) {
  if (!p) eit3d::fail(eit3d::ErrorKind::InvalidArgument, std::string(what) + " must not be NULL");
}

}  // namespace

extern "C" {

const char* eit3d_version(void) { return "0.1.0"; }

const char* eit3d_last_error(void) { return g_last_error.c_str(); }

void eit3d_free_string(char* s) { std::free(s); }

void eit3d_set_logger(eit3d_log_fn fn, void* user) {
  std::lock_guard lock(g_log_mutex);
  g_log_fn = fn;
  g_log_user = user;
}

eit3d_status eit3d_config_normalize(const char* config_json, char** out_json) {
  return guarded([&] {
    need(out_json, "out_json");
    *out_json = nullptr;
    nlohmann::json j = config(config_json);
    put(out_json, j.dump(2));
  });
}

eit3d_status eit3d_gen_dataset(const char* config_json, const char* out_path, int dry_run, char** summary_json) {
  return guarded([&] {
    if (summary_json) *summary_json = nullptr;
    put(summary_json, eit3d::cmd_gen_dataset(config(config_json), str(out_path), dry_run != 0, kLog).dump());
  });
}

eit3d_status eit3d_train(const char* config_json, const char* dataset_path, const char* checkpoint_path,
                         const char* history_csv_path, char** summary_json) {
  return guarded([&] {
    if (summary_json) *summary_json = nullptr;
    need(dataset_path, "dataset_path");
    put(summary_json, eit3d::cmd_train(config(config_json), dataset_path, str(checkpoint_path),
                                       str(history_csv_path), kLog)
                          .dump());
  });
}

eit3d_status eit3d_reconstruct(const char* config_json, const char* method, const char* frames_path,
                               const char* dataset_path, const int* indices, size_t n_indices,
                               const char* checkpoint_path, const char* out_path, char** summary_json) {
  return guarded([&] {
    if (summary_json) *summary_json = nullptr;
    eit3d::ReconstructRequest req;
    req.method = str(method);
    req.frames_path = str(frames_path);
    req.dataset_path = str(dataset_path);
    if (n_indices) need(indices, "indices");
    req.indices.assign(indices, indices + n_indices);
    req.checkpoint_path = str(checkpoint_path);
    req.out_path = str(out_path);
    put(summary_json, eit3d::cmd_reconstruct(config(config_json), req, kLog).dump());
  });
}

eit3d_status eit3d_evaluate(const char* config_json, const char* dataset_path, const char* methods,
                            const char* checkpoint_path, char** report_json, char** table_text) {
  return guarded([&] {
    if (report_json) *report_json = nullptr;
    if (table_text) *table_text = nullptr;
    need(dataset_path, "dataset_path");
    std::vector<std::string> list;
    std::istringstream ms(str(methods));
    for (std::string m; std::getline(ms, m, ',');) {
      if (!m.empty()) list.push_back(m);
    }
    const nlohmann::json out = eit3d::cmd_evaluate(config(config_json), dataset_path, list, str(checkpoint_path), kLog);
    put(report_json, out.at("reports").dump(2));
    put(table_text, out.at("table").get<std::string>());
  });
}

eit3d_status eit3d_export_slices(const char* volume_path, char axis, const int* indices, size_t n_indices,
                                 const char* out_dir, char** summary_json) {
  return guarded([&] {
    if (summary_json) *summary_json = nullptr;
    need(volume_path, "volume_path");
    need(out_dir, "out_dir");
    if (n_indices) need(indices, "indices");
    put(summary_json,
        eit3d::cmd_export_slices(volume_path, axis, std::vector<int>(indices, indices + n_indices), out_dir).dump());
  });
}

eit3d_status eit3d_bench(const char* config_json, const char* checkpoint_path, int repeats, char** summary_json) {
  return guarded([&] {
    if (summary_json) *summary_json = nullptr;
    put(summary_json, eit3d::cmd_bench(config(config_json), str(checkpoint_path), repeats, kLog).dump());
  });
}

eit3d_status eit3d_model_load(const char* checkpoint_path, eit3d_model** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    need(checkpoint_path, "checkpoint_path");
    *out = new eit3d_model{eit3d::load_checkpoint(checkpoint_path)};
  });
}

void eit3d_model_free(eit3d_model* model) { delete model; }

size_t eit3d_model_input_length(const eit3d_model* model) {
  return model ? static_cast<size_t>(model->model.network.arch().input_len) : 0;
}

eit3d_status eit3d_model_reconstruct(const eit3d_model* model, const float* frame, size_t frame_len,
                                     float* out_volume) {
  return guarded([&] {
    need(model, "model");
    need(frame, "frame");
    need(out_volume, "out_volume");
    const eit3d::VoxelVolume v = eit3d::reconstruct(model->model.network, std::span<const float>(frame, frame_len));
    std::memcpy(out_volume, v.data.data(), sizeof(float) * v.data.size());
  });
}

eit3d_status eit3d_one_step_create(const char* config_json, const char* dataset_path, eit3d_one_step** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    const eit3d::RunConfig cfg = config(config_json);
    if (dataset_path) {
      *out = new eit3d_one_step{eit3d::OneStepModel::from_dataset(eit3d::read_dataset(dataset_path), cfg.baseline)};
    } else {
      *out = new eit3d_one_step{eit3d::OneStepModel(cfg.geometry, cfg.simulation, cfg.protocol(), nullptr,
                                                    cfg.baseline)};
    }
  });
}

void eit3d_one_step_free(eit3d_one_step* op) { delete op; }

double eit3d_one_step_lambda(const eit3d_one_step* op) { return op ? op->op.lambda() : 0.0; }

eit3d_status eit3d_one_step_reconstruct(const eit3d_one_step* op, const float* frame, size_t frame_len,
                                        float* out_volume) {
  return guarded([&] {
    need(op, "op");
    need(frame, "frame");
    need(out_volume, "out_volume");
    if (static_cast<int>(frame_len) != op->op.frame_length()) {
      eit3d::fail(eit3d::ErrorKind::InvalidArgument, "frame has " + std::to_string(frame_len) +
                                                         " values, operator expects " +
                                                         std::to_string(op->op.frame_length()));
    }
    const eit3d::VoxelVolume v = op->op.reconstruct(std::span<const float>(frame, frame_len));
    std::memcpy(out_volume, v.data.data(), sizeof(float) * v.data.size());
  });
}

}  // extern "C"
