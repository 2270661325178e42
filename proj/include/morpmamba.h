/*
 * morpmamba - morphological spatial/spectral state-space classifier for
 * hyperspectral cubes.
 *
 * C API over the shared library: opaque handles, integer status codes, and
 * per-thread error messages. All functions return MM_OK (0) on success; on
 * failure they return a nonzero status and mm_last_error() describes what
 * went wrong on the calling thread.
 */
#ifndef MORPMAMBA_H
#define MORPMAMBA_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MM_API __declspec(dllexport)
#else
#define MM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mm_status {
    MM_OK = 0,
    MM_ERR_INVALID = 1,  /* bad argument or call sequence */
    MM_ERR_IO = 2,       /* file open/read/write failure */
    MM_ERR_FORMAT = 3,   /* malformed .hsic / .labels / .mmck content */
    MM_ERR_SHAPE = 4,    /* tensor or cube dimension mismatch */
    MM_ERR_CONFIG = 5,   /* invalid or unknown configuration */
    MM_ERR_NUMERIC = 6,  /* non-finite values encountered */
    MM_ERR_INTERNAL = 7
} mm_status;

typedef struct mm_config mm_config;  /* run configuration (key=value store)   */
typedef struct mm_cube mm_cube;      /* hyperspectral cube plus label map     */
typedef struct mm_model mm_model;    /* trained model loaded from a checkpoint */

MM_API const char* mm_version(void);

/* Message for the most recent failure on this thread; never NULL. */
MM_API const char* mm_last_error(void);

/* ------------------------------------------------------------------ config
 * Keys and values use the same flat names as the CLI flags and config files
 * (variant, patch, bands, dim, heads, kernel, ssm_dim, lambda, epochs, batch,
 * lr, shuffle, ratios, seed, precision, threads, mode, data, out, checkpoint,
 * split, h, w, c, classes, noise, sweep_*). Unknown keys are rejected with
 * MM_ERR_CONFIG.
 */
MM_API mm_config* mm_config_new(void);
MM_API void mm_config_free(mm_config* cfg);
MM_API mm_status mm_config_set(mm_config* cfg, const char* key, const char* value);
/* Apply a key=value file ('#' comments); later mm_config_set calls override. */
MM_API mm_status mm_config_load_file(mm_config* cfg, const char* path);

/* -------------------------------------------------------------------- cubes */
MM_API mm_status mm_cube_synth(uint32_t h, uint32_t w, uint32_t c, uint32_t classes,
                               double noise_sigma, uint64_t seed, mm_cube** out);
MM_API mm_status mm_cube_load(const char* path, mm_cube** out);
MM_API mm_status mm_cube_save(const mm_cube* cube, const char* path);
MM_API mm_status mm_cube_dims(const mm_cube* cube, uint32_t* h, uint32_t* w, uint32_t* c,
                              uint32_t* classes);
MM_API mm_status mm_cube_select_bands(const mm_cube* cube, uint32_t count, mm_cube** out);
MM_API mm_status mm_cube_normalize(const mm_cube* cube, mm_cube** out);
MM_API void mm_cube_free(mm_cube* cube);

/* ------------------------------------------------------------------- models */
MM_API mm_status mm_model_load(const char* checkpoint_path, mm_model** out);
MM_API mm_status mm_model_param_count(const mm_model* model, uint64_t* out);
/* patch: P*P*C' floats, pixel-major band-minor (P, C' from the checkpoint);
 * logits: K floats. */
MM_API mm_status mm_model_predict(const mm_model* model, const float* patch, size_t patch_len,
                                  float* logits, size_t logits_len);
MM_API void mm_model_free(mm_model* model);

/* ----------------------------------------------------------------- commands
 * Each runs one pipeline command against the configuration and, on success,
 * stores a malloc'd single-line JSON summary in *result_json (release with
 * mm_string_free). File artifacts are written as documented in the README.
 */
MM_API mm_status mm_run_gen_data(const mm_config* cfg, char** result_json);
MM_API mm_status mm_run_train(const mm_config* cfg, char** result_json);
MM_API mm_status mm_run_eval(const mm_config* cfg, char** result_json);
MM_API mm_status mm_run_predict_map(const mm_config* cfg, char** result_json);
MM_API mm_status mm_run_ablate(const mm_config* cfg, char** result_json);

MM_API void mm_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* MORPMAMBA_H */
