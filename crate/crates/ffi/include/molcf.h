#ifndef MOLCF_H
#define MOLCF_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MolcfStatus {
  MOLCF_STATUS_OK = 0,
  MOLCF_STATUS_NULL_POINTER = 1,
  MOLCF_STATUS_INVALID_UTF8 = 2,
  /**
   * SMILES could not be read.
   */
  MOLCF_STATUS_PARSE = 3,
  MOLCF_STATUS_IO = 4,
  /**
   * Model load or inference failed.
   */
  MOLCF_STATUS_MODEL = 5,
  /**
   * An expected input file or directory is absent.
   */
  MOLCF_STATUS_MISSING = 6,
  MOLCF_STATUS_PANIC = 7,
} MolcfStatus;

/**
 * Trained graph classifier.
 */
typedef struct MolcfGtgnn MolcfGtgnn;

/**
 * Seed-aggregated metrics of a run directory. Proximity fields are NaN
 * when undefined.
 */
typedef struct MolcfSummary {
  uint32_t runs;
  double validity_mean;
  double validity_std;
  double validity_feasible_mean;
  double validity_feasible_std;
  double proximity_mean;
  double proximity_feasible_mean;
} MolcfSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *molcf_last_error(void);

/**
 * Library version as a static string.
 */
const char *molcf_version(void);

/**
 * Loads a classifier checkpoint written by `molcf train-gtgnn`.
 *
 * # Safety
 * `path` is a NUL-terminated string; `handle` is writable.
 */
enum MolcfStatus molcf_gtgnn_load(const char *path, struct MolcfGtgnn **handle);

/**
 * Classifies a molecule: `label` gets 0 or 1, `prob_positive` the class-1
 * probability.
 *
 * # Safety
 * `handle` comes from `molcf_gtgnn_load`; `smiles` is NUL-terminated; the
 * out-pointers are writable.
 */
enum MolcfStatus molcf_gtgnn_predict(const struct MolcfGtgnn *handle,
                                     const char *smiles,
                                     uint8_t *label,
                                     double *prob_positive);

/**
 * Graph embedding width of the classifier.
 *
 * # Safety
 * `handle` comes from `molcf_gtgnn_load`.
 */
enum MolcfStatus molcf_gtgnn_embed_dim(const struct MolcfGtgnn *handle, size_t *dim);

/**
 * Releases a classifier. Null is ignored.
 *
 * # Safety
 * `handle` comes from `molcf_gtgnn_load` and is not used afterwards.
 */
void molcf_gtgnn_free(struct MolcfGtgnn *handle);

/**
 * Writes 1 to `feasible` when the molecule passes sanitization, else 0.
 *
 * # Safety
 * `smiles` is NUL-terminated; `feasible` is writable.
 */
enum MolcfStatus molcf_smiles_is_feasible(const char *smiles, uint8_t *feasible);

/**
 * Scores every seed of a run directory, rewriting its report files, and
 * fills `summary`.
 *
 * # Safety
 * `run_dir` is NUL-terminated; `summary` is writable.
 */
enum MolcfStatus molcf_evaluate_run(const char *run_dir, struct MolcfSummary *summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOLCF_H */
