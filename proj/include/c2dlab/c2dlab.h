#ifndef C2DLAB_C2DLAB_H
#define C2DLAB_C2DLAB_H

#include <stddef.h>

#if defined(_WIN32)
#define C2D_API __declspec(dllexport)
#else
#define C2D_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum c2d_status {
  C2D_OK = 0,
  C2D_ERR_CONFIG = 1,
  C2D_ERR_NUMERICAL = 2,
  C2D_ERR_IO = 3,
  C2D_ERR_INTERNAL = 4
} c2d_status;

/* Experiment configuration. Created with defaults; "auto" fields are
 * resolved when a stage runs. */
typedef struct c2d_config c2d_config;

/* Message of the last failed call on this thread ("" if none). */
C2D_API const char* c2d_last_error(void);
C2D_API const char* c2d_version(void);

C2D_API c2d_status c2d_config_new(c2d_config** out);
C2D_API void c2d_config_free(c2d_config* cfg);
/* Replaces cfg with defaults overlaid by the file. */
C2D_API c2d_status c2d_config_load(c2d_config* cfg, const char* path);
C2D_API c2d_status c2d_config_save(const c2d_config* cfg, const char* path);
C2D_API c2d_status c2d_config_set(c2d_config* cfg, const char* key, const char* value);
/* Copies the value (NUL-terminated, truncated to buf_len) into buf. needed,
 * if non-null, receives the full length including the terminator. */
C2D_API c2d_status c2d_config_get(const c2d_config* cfg, const char* key, char* buf, size_t buf_len,
                                  size_t* needed);
C2D_API c2d_status c2d_config_validate(const c2d_config* cfg);
C2D_API size_t c2d_config_key_count(void);
/* NULL when i is out of range. */
C2D_API const char* c2d_config_key(size_t i);

/* Path of a run-directory artifact ("config", "runlog", "train_log",
 * "encoder", "warmup_a", "warmup_b", "final_a", "final_b", "per_sample_a",
 * "per_sample_b", "divide_a", "divide_b", "histogram", "features",
 * "summary", "train_data", "test_data", "proxy_data") under output_dir. */
C2D_API c2d_status c2d_run_path(const c2d_config* cfg, const char* artifact, char* buf, size_t buf_len,
                                size_t* needed);

/* Runs one stage ("gen-data", "pretrain", "warmup", "divide", "train",
 * "probe") in output_dir after writing the effective config there. */
C2D_API c2d_status c2d_run_stage(const c2d_config* cfg, const char* stage);
C2D_API c2d_status c2d_run_pipeline(const c2d_config* cfg);

/* Divides a per-sample loss dump. roc_auc (NaN when the dump holds a single
 * class) and labeled_frac are optional outputs. */
C2D_API c2d_status c2d_divide_file(const char* losses_csv, double tau, const char* out_csv, double* roc_auc,
                                   double* labeled_frac);

/* Compares run directories. out_csv may be NULL. table and warnings, when
 * non-null, receive strings to release with c2d_string_free. */
C2D_API c2d_status c2d_report(const char* const* run_dirs, size_t n, const char* out_csv, char** table,
                              char** warnings);

/* One pipeline per (rate, init) under root; inits are "random", "ssl" or
 * "proxy". */
C2D_API c2d_status c2d_sweep(const c2d_config* base, const double* rates, size_t n_rates,
                             const char* const* inits, size_t n_inits, const char* root);

C2D_API c2d_status c2d_roc_auc(const double* scores, const unsigned char* is_noisy, size_t n, double* out);

C2D_API void c2d_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif
