#ifndef UNLEARN_LAB_H
#define UNLEARN_LAB_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UlStatus {
  UL_STATUS_OK = 0,
  UL_STATUS_NULL_POINTER = 1,
  UL_STATUS_INVALID_ARGUMENT = 2,
  UL_STATUS_VALIDATION = 3,
  UL_STATUS_RUNTIME = 4,
  UL_STATUS_IO = 5,
  UL_STATUS_PANIC = 6,
} UlStatus;

typedef struct UlCorpus UlCorpus;

typedef struct UlMask UlMask;

typedef struct UlModel UlModel;

typedef struct UlDomainReport {
  double us;
  double rs;
  double hs;
  double ppl_unlearn;
  double ppl_retain;
  double rouge_l_unlearn;
  double rouge_l_retain;
} UlDomainReport;

typedef struct UlReport {
  struct UlDomainReport privacy;
  struct UlDomainReport copyright;
  /**
   * NaN when the corpus has no general split.
   */
  double general_accuracy;
} UlReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *ul_last_error(void);

/**
 * # Safety
 * `spec_json` is null or a NUL-terminated string; `out` is writable.
 */
enum UlStatus ul_corpus_generate(const char *spec_json, struct UlCorpus **out);

/**
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
enum UlStatus ul_corpus_load(const char *path, struct UlCorpus **out);

/**
 * # Safety
 * `corpus` is a live handle; `path` is a NUL-terminated string.
 */
enum UlStatus ul_corpus_save(const struct UlCorpus *corpus, const char *path);

/**
 * Total number of items, or 0 for a null handle.
 *
 * # Safety
 * `corpus` is null or a live handle.
 */
uintptr_t ul_corpus_len(const struct UlCorpus *corpus);

/**
 * # Safety
 * `corpus` is null or a handle not yet freed.
 */
void ul_corpus_free(struct UlCorpus *corpus);

/**
 * New model. When `corpus` is given, vocabulary size and sequence length are
 * fitted to it.
 *
 * # Safety
 * `corpus` is null or a live handle; `config_json` is null or a
 * NUL-terminated string; `out` is writable.
 */
enum UlStatus ul_model_init(const struct UlCorpus *corpus,
                            const char *config_json,
                            struct UlModel **out);

/**
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
enum UlStatus ul_model_load(const char *path, struct UlModel **out);

/**
 * # Safety
 * `model` is a live handle; `path` is a NUL-terminated string.
 */
enum UlStatus ul_model_save(const struct UlModel *model, const char *path);

/**
 * Deep copy.
 *
 * # Safety
 * `model` is a live handle; `out` is writable.
 */
enum UlStatus ul_model_clone(const struct UlModel *model, struct UlModel **out);

/**
 * # Safety
 * `model` is null or a live handle.
 */
uintptr_t ul_model_num_params(const struct UlModel *model);

/**
 * Writes the 64-character hex fingerprint plus a NUL into `buf`, which
 * must hold at least 65 bytes.
 *
 * # Safety
 * `model` is a live handle; `buf` points to `len` writable bytes.
 */
enum UlStatus ul_model_fingerprint(const struct UlModel *model, char *buf, uintptr_t len);

/**
 * # Safety
 * `model` is null or a handle not yet freed.
 */
void ul_model_free(struct UlModel *model);

/**
 * Trains `model` in place; `accuracy` (nullable) receives the final
 * training exact-match fraction.
 *
 * # Safety
 * Handles are live; `options_json` is null or a NUL-terminated string;
 * `accuracy` is null or writable.
 */
enum UlStatus ul_train_vanilla(struct UlModel *model,
                               const struct UlCorpus *corpus,
                               const char *options_json,
                               double *accuracy);

/**
 * Probes the four core datasets and builds the frozen mask.
 *
 * # Safety
 * Handles are live; `out` is writable.
 */
enum UlStatus ul_localize(const struct UlModel *model,
                          const struct UlCorpus *corpus,
                          uintptr_t trials,
                          uint64_t seed,
                          double k_op_ur,
                          double k_op_rr,
                          struct UlMask **out);

/**
 * Mask restricted to the chosen components.
 *
 * # Safety
 * `mask` is a live handle; `out` is writable.
 */
enum UlStatus ul_mask_ablate(const struct UlMask *mask,
                             bool keep_op_ur,
                             bool keep_op_rr,
                             struct UlMask **out);

/**
 * # Safety
 * `mask` is null or a live handle.
 */
uintptr_t ul_mask_frozen_count(const struct UlMask *mask);

/**
 * # Safety
 * `mask` is null or a handle not yet freed.
 */
void ul_mask_free(struct UlMask *mask);

/**
 * Runs the method named `method` (e.g. `"grail"`, `"ga_gd_id"`) and
 * replaces `model` with the result. `mask` is required for `grail` only.
 * `epochs` (nullable) receives the number of epochs run.
 *
 * # Safety
 * `model` and `corpus` are live handles; `mask` is null or live; strings
 * are null (where allowed) or NUL-terminated; `epochs` is null or writable.
 */
enum UlStatus ul_unlearn(struct UlModel *model,
                         const struct UlCorpus *corpus,
                         const char *method,
                         const struct UlMask *mask,
                         const char *hyper_json,
                         uintptr_t *epochs);

/**
 * # Safety
 * Handles are live; `out` is writable.
 */
enum UlStatus ul_evaluate(const struct UlModel *model,
                          const struct UlCorpus *corpus,
                          struct UlReport *out);

/**
 * # Safety
 * `out` is writable.
 */
enum UlStatus ul_harmonic_success(double us, double rs, double *out);

/**
 * # Safety
 * `candidate` and `reference` point to `n_candidate` / `n_reference`
 * tokens; `out` is writable.
 */
enum UlStatus ul_rouge_l(const uint32_t *candidate,
                         uintptr_t n_candidate,
                         const uint32_t *reference,
                         uintptr_t n_reference,
                         double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UNLEARN_LAB_H */
