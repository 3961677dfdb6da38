#ifndef EIT3D_EIT3D_H
#define EIT3D_EIT3D_H

/* C interface of the eit3d shared library.
 *
 * Every fallible call returns an eit3d_status; on failure the message is
 * available from eit3d_last_error() on the same thread until the next call.
 * Strings returned through char** out-parameters are owned by the caller and
 * released with eit3d_free_string(). Configs are JSON documents; NULL or ""
 * means all defaults. Unknown config keys are rejected. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(EIT3D_BUILDING_LIBRARY)
#define EIT3D_API __declspec(dllexport)
#else
#define EIT3D_API __declspec(dllimport)
#endif
#else
#define EIT3D_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum eit3d_status {
  EIT3D_OK = 0,
  EIT3D_ERR_INVALID_ARGUMENT = 1,
  EIT3D_ERR_IO = 2,
  EIT3D_ERR_FORMAT = 3,
  EIT3D_ERR_NUMERIC = 4,
  EIT3D_ERR_INTERNAL = 5
} eit3d_status;

typedef enum eit3d_log_level { EIT3D_LOG_INFO = 0, EIT3D_LOG_WARNING = 1 } eit3d_log_level;

typedef void (*eit3d_log_fn)(eit3d_log_level level, const char* message, void* user);

#define EIT3D_GRID_X 32
#define EIT3D_GRID_Y 32
#define EIT3D_GRID_Z 40
#define EIT3D_VOXELS (EIT3D_GRID_X * EIT3D_GRID_Y * EIT3D_GRID_Z)

EIT3D_API const char* eit3d_version(void);
EIT3D_API const char* eit3d_last_error(void);
EIT3D_API void eit3d_free_string(char* s);

/* Process-wide progress sink; NULL silences. */
EIT3D_API void eit3d_set_logger(eit3d_log_fn fn, void* user);

/* Parses, validates and re-serializes a config with every default filled in. */
EIT3D_API eit3d_status eit3d_config_normalize(const char* config_json, char** out_json);

/* Pipeline commands. Each writes a JSON summary to *summary_json when it is
 * not NULL. */
EIT3D_API eit3d_status eit3d_gen_dataset(const char* config_json, const char* out_path, int dry_run,
                                         char** summary_json);
EIT3D_API eit3d_status eit3d_train(const char* config_json, const char* dataset_path, const char* checkpoint_path,
                                   const char* history_csv_path, char** summary_json);
/* method: "tn-net" or "one-step". Frames come from frames_path (text) or from
 * the records `indices` of dataset_path. */
EIT3D_API eit3d_status eit3d_reconstruct(const char* config_json, const char* method, const char* frames_path,
                                         const char* dataset_path, const int* indices, size_t n_indices,
                                         const char* checkpoint_path, const char* out_path, char** summary_json);
/* methods: comma-separated subset of tn-net, one-step, oracle. */
EIT3D_API eit3d_status eit3d_evaluate(const char* config_json, const char* dataset_path, const char* methods,
                                      const char* checkpoint_path, char** report_json, char** table_text);
EIT3D_API eit3d_status eit3d_export_slices(const char* volume_path, char axis, const int* indices, size_t n_indices,
                                           const char* out_dir, char** summary_json);
EIT3D_API eit3d_status eit3d_bench(const char* config_json, const char* checkpoint_path, int repeats,
                                   char** summary_json);

/* A loaded TN-Net checkpoint. Reconstruction does not modify the model and
 * may be called from any number of threads at once. */
typedef struct eit3d_model eit3d_model;

EIT3D_API eit3d_status eit3d_model_load(const char* checkpoint_path, eit3d_model** out);
EIT3D_API void eit3d_model_free(eit3d_model* model);
EIT3D_API size_t eit3d_model_input_length(const eit3d_model* model);
/* out_volume receives EIT3D_VOXELS floats, x fastest, then y, then z. */
EIT3D_API eit3d_status eit3d_model_reconstruct(const eit3d_model* model, const float* frame, size_t frame_len,
                                               float* out_volume);

/* A one-step Gauss-Newton operator built from a dataset's metadata, or from a
 * config when dataset_path is NULL. */
typedef struct eit3d_one_step eit3d_one_step;

EIT3D_API eit3d_status eit3d_one_step_create(const char* config_json, const char* dataset_path,
                                             eit3d_one_step** out);
EIT3D_API void eit3d_one_step_free(eit3d_one_step* op);
EIT3D_API double eit3d_one_step_lambda(const eit3d_one_step* op);
EIT3D_API eit3d_status eit3d_one_step_reconstruct(const eit3d_one_step* op, const float* frame, size_t frame_len,
                                                  float* out_volume);

#ifdef __cplusplus
}
#endif

#endif
