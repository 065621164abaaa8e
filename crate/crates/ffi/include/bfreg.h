#ifndef BFREG_H
#define BFREG_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status returned by every fallible call.
 */
typedef enum BfregStatus {
  BFREG_STATUS_OK = 0,
  BFREG_STATUS_NULL_POINTER = 1,
  BFREG_STATUS_INVALID_ARGUMENT = 2,
  BFREG_STATUS_SHAPE = 3,
  BFREG_STATUS_IO = 4,
  BFREG_STATUS_CONFIG = 5,
  BFREG_STATUS_KNOWLEDGE = 6,
  BFREG_STATUS_DIVERGED = 7,
  BFREG_STATUS_CHECKPOINT = 8,
  BFREG_STATUS_NON_FINITE = 9,
  BFREG_STATUS_UTF8 = 10,
  BFREG_STATUS_INTERNAL = 11,
} BfregStatus;

/**
 * A loaded knowledge base.
 */
typedef struct BfregKnowledge BfregKnowledge;

/**
 * A model bound to a knowledge base.
 */
typedef struct BfregModel BfregModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *bfreg_version(void);

/**
 * Length in bytes of the calling thread's last error message, excluding the terminator.
 */
size_t bfreg_last_error_length(void);

/**
 * Copies the last error message (NUL-terminated, truncated to fit) into
 * `buf` of capacity `len`. Returns the number of bytes written before the terminator.
 *
 * # Safety
 * `buf` must be valid for `len` bytes of writes.
 */
size_t bfreg_last_error_message(char *buf, size_t len);

/**
 * Loads a knowledge manifest.
 *
 * # Safety
 * `manifest` must be a NUL-terminated string; `out` a writable pointer.
 */
enum BfregStatus bfreg_knowledge_load(const char *manifest, struct BfregKnowledge **out);

/**
 * Builds a synthetic gene-only knowledge base with `genes` nodes.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum BfregStatus bfreg_knowledge_synthetic(size_t genes,
                                           double edge_prob,
                                           uint64_t seed,
                                           struct BfregKnowledge **out);

/**
 * Number of genes (bottom-level nodes).
 *
 * # Safety
 * `kb` must come from this library; `out` must be writable.
 */
enum BfregStatus bfreg_knowledge_gene_count(const struct BfregKnowledge *kb, size_t *out);

/**
 * Number of levels.
 *
 * # Safety
 * `kb` must come from this library; `out` must be writable.
 */
enum BfregStatus bfreg_knowledge_level_count(const struct BfregKnowledge *kb, size_t *out);

/**
 * Releases a knowledge handle; null is ignored.
 *
 * # Safety
 * `kb` must come from this library and not be used afterwards.
 */
void bfreg_knowledge_free(struct BfregKnowledge *kb);

/**
 * Creates a model over `kb` from a JSON model config (null for defaults).
 *
 * # Safety
 * `kb` must come from this library; `config_json` null or NUL-terminated; `out` writable.
 */
enum BfregStatus bfreg_model_new(const struct BfregKnowledge *kb,
                                 const char *config_json,
                                 uint64_t seed,
                                 struct BfregModel **out);

/**
 * Restores a checkpoint written by `bfreg_model_save` against `kb`.
 *
 * # Safety
 * `path` NUL-terminated; `kb` from this library; `out` writable.
 */
enum BfregStatus bfreg_model_load(const char *path,
                                  const struct BfregKnowledge *kb,
                                  struct BfregModel **out);

/**
 * Writes a checkpoint.
 *
 * # Safety
 * `model` from this library; `path` NUL-terminated.
 */
enum BfregStatus bfreg_model_save(const struct BfregModel *model, const char *path);

/**
 * Width of one prediction row.
 *
 * # Safety
 * `model` from this library; `out` writable.
 */
enum BfregStatus bfreg_model_output_width(const struct BfregModel *model, size_t *out);

/**
 * Evaluation-mode forward pass. `x` is `samples × genes` row-major; `out`
 * receives `samples × output_width` values and `out_len` must equal that.
 *
 * # Safety
 * `x` valid for `samples * genes` reads, `out` for `out_len` writes.
 */
enum BfregStatus bfreg_model_predict(const struct BfregModel *model,
                                     const double *x,
                                     size_t samples,
                                     size_t genes,
                                     double *out,
                                     size_t out_len);

/**
 * Releases a model handle; null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void bfreg_model_free(struct BfregModel *model);

/**
 * Runs a CLI task (`impute`, `classify`, `forecast`, `trajectory`,
 * `discover`, `synth`, `validate`) with a config file, writing into `out_dir`
 * (null for the configured directory).
 *
 * # Safety
 * String arguments must be NUL-terminated; `out_dir` may be null.
 */
enum BfregStatus bfreg_run(const char *task, const char *config, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BFREG_H */
