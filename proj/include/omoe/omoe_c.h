/* Copyright 2026 The omoe Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C API of the omoe shared library. All heavy lifting (training runs,
 * checkpoint analysis, config comparison, exports) happens behind these
 * calls; clients link only this header plus libomoe. Errors come back as
 * status codes with a message copied into the caller's buffer.
 */
#ifndef OMOE_OMOE_C_H
#define OMOE_OMOE_C_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum omoe_status {
  OMOE_OK = 0,
  OMOE_ERR_IO = 1,      /* file missing/corrupt/unwritable */
  OMOE_ERR_CONFIG = 2,  /* invalid config or arguments */
  OMOE_ERR_NAN = 3,     /* training aborted on NaN loss */
  OMOE_ERR_PARTIAL = 4, /* compare finished but some runs failed */
  OMOE_ERR_INTERNAL = 5
} omoe_status;

const char* omoe_version(void);

/* Trains the config at config_path; writes model.omoe, metrics.csv and
 * summary.json into out_dir. seed >= 0 overrides the config's train seed. */
omoe_status omoe_train(const char* config_path, const char* out_dir, int64_t seed,
                       char* err, size_t err_cap);

/* Taps pre/post-orthogonalization expert vectors from a trained checkpoint.
 * layers may be NULL (all layers); target may be NULL (first injected);
 * with_pca != 0 additionally writes 2-D projections. */
omoe_status omoe_analyze(const char* checkpoint_path, const int32_t* layers, size_t n_layers,
                         int32_t tokens, const char* target, int32_t with_pca,
                         const char* out_dir, char* err, size_t err_cap);

/* Runs every config (sweeps expanded) over every seed and writes
 * comparison.csv / comparison.md into out_dir. st_mt != 0 adds single-task
 * baseline columns. Returns OMOE_ERR_PARTIAL when some runs failed; the
 * table then carries failure markers. */
omoe_status omoe_compare(const char* const* config_paths, size_t n_configs,
                         const int64_t* seeds, size_t n_seeds, int32_t st_mt,
                         const char* out_dir, char* err, size_t err_cap);

/* Dumps a checkpoint's config snapshot and tensors as CSV into out_dir. */
omoe_status omoe_export(const char* checkpoint_path, const char* out_dir,
                        char* err, size_t err_cap);

/* Opaque handle over a loaded checkpoint (header + parameters). */
typedef struct omoe_model omoe_model;

omoe_model* omoe_model_open(const char* checkpoint_path, char* err, size_t err_cap);
void omoe_model_close(omoe_model* m);

int64_t omoe_model_trainable_params(const omoe_model* m);
int64_t omoe_model_expert_params(const omoe_model* m);
int64_t omoe_model_router_params(const omoe_model* m);

/* "single" or "double" */
const char* omoe_model_precision(const omoe_model* m);

/* Heap-allocated JSON snapshot of the run config; free with
 * omoe_string_free. Returns NULL on allocation failure. */
char* omoe_model_config_json(const omoe_model* m);
void omoe_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* OMOE_OMOE_C_H */
