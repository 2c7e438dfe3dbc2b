#ifndef FEDMVC_H
#define FEDMVC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum FmvcStatus {
  FMVC_STATUS_OK = 0,
  FMVC_STATUS_NULL_POINTER = 1,
  FMVC_STATUS_INVALID_ARGUMENT = 2,
  FMVC_STATUS_SHAPE = 3,
  FMVC_STATUS_DEGENERATE = 4,
  FMVC_STATUS_PROTOCOL = 5,
  FMVC_STATUS_IO = 6,
  FMVC_STATUS_TRAINING_ABORTED = 7,
  FMVC_STATUS_CONFIG = 8,
  /**
   * The requested value does not exist, e.g. metrics without labels.
   */
  FMVC_STATUS_UNAVAILABLE = 9,
  FMVC_STATUS_BUFFER_TOO_SMALL = 10,
  FMVC_STATUS_PANIC = 99,
} FmvcStatus;

/**
 * Values accepted in [`FmvcConfig::ablation`].
 */
typedef enum FmvcAblation {
  FMVC_ABLATION_FULL = 0,
  FMVC_ABLATION_NO_MIGRATION = 1,
  FMVC_ABLATION_NO_FUSION_MODULE = 2,
  FMVC_ABLATION_NO_GLOBAL_GUIDANCE = 3,
  FMVC_ABLATION_NO_GLOBAL_HEAD = 4,
} FmvcAblation;

/**
 * Opaque multi-view dataset.
 */
typedef struct FmvcDataset FmvcDataset;

/**
 * Opaque result of a finished session.
 */
typedef struct FmvcOutcome FmvcOutcome;

/**
 * Session settings. Obtain defaults from [`fmvc_config_default`].
 */
typedef struct FmvcConfig {
  uintptr_t clusters;
  uintptr_t rounds;
  uintptr_t epochs;
  uintptr_t pretrain_epochs;
  uintptr_t k_neighbors;
  double gamma1;
  double gamma2;
  double learning_rate;
  /**
   * Seeded k-means runs wherever centers are fitted.
   */
  uintptr_t kmeans_restarts;
  /**
   * One of [`FmvcAblation`].
   */
  uint32_t ablation;
  /**
   * Non-zero: weight pre-training fusion by sample presence.
   */
  uint8_t pretrain_presence;
  /**
   * Non-zero: train clients on separate threads.
   */
  uint8_t parallel;
  uint64_t seed;
} FmvcConfig;

typedef struct FmvcScores {
  double acc;
  double nmi;
  double ari;
} FmvcScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fmvc_version(void);

/**
 * Message of the last failed call on this thread, or an empty string.
 * Valid until the next call into the library from the same thread.
 */
const char *fmvc_last_error(void);

enum FmvcStatus fmvc_config_default(uintptr_t clusters, struct FmvcConfig *out);

/**
 * Empty dataset for `samples` row-aligned samples; add views next.
 */
enum FmvcStatus fmvc_dataset_new(uintptr_t samples, struct FmvcDataset **out);

/**
 * Append one view: `values` is `samples * cols` row-major. `present` holds
 * one flag per sample (non-zero = observed) or is null for all observed.
 * Absent rows are zeroed.
 */
enum FmvcStatus fmvc_dataset_add_view(struct FmvcDataset *ds,
                                      const double *values,
                                      uintptr_t cols,
                                      const uint8_t *present);

/**
 * Attach ground-truth labels, one per sample.
 */
enum FmvcStatus fmvc_dataset_set_labels(struct FmvcDataset *ds, const uint32_t *labels);

/**
 * Per-view standardization over observed rows.
 */
enum FmvcStatus fmvc_dataset_standardize(struct FmvcDataset *ds);

/**
 * Load `view_*.csv`, optional `labels.csv` and `mask.csv` from a directory.
 */
enum FmvcStatus fmvc_dataset_load(const char *dir, struct FmvcDataset **out);

/**
 * Synthetic Gaussian blobs seen through one random projection per view.
 */
enum FmvcStatus fmvc_dataset_synth(uintptr_t samples,
                                   uintptr_t clusters,
                                   const uintptr_t *dims,
                                   uintptr_t views,
                                   double separation,
                                   uint64_t seed,
                                   struct FmvcDataset **out);

/**
 * Knock views out of a fraction `rate` of samples. `alpha` > 0 skews which
 * views lose samples by a Dirichlet draw; pass 0 for no skew.
 */
enum FmvcStatus fmvc_dataset_apply_missing(struct FmvcDataset *ds,
                                           double rate,
                                           uint64_t seed,
                                           double alpha);

/**
 * Sample count, or 0 for a null handle.
 */
uintptr_t fmvc_dataset_samples(const struct FmvcDataset *ds);

/**
 * View count, or 0 for a null handle.
 */
uintptr_t fmvc_dataset_views(const struct FmvcDataset *ds);

/**
 * Samples observed in every view, or 0 for a null handle.
 */
uintptr_t fmvc_dataset_complete(const struct FmvcDataset *ds);

void fmvc_dataset_free(struct FmvcDataset *ds);

/**
 * Run a full session. The dataset is not modified.
 */
enum FmvcStatus fmvc_run(const struct FmvcDataset *ds,
                         const struct FmvcConfig *config,
                         struct FmvcOutcome **out);

/**
 * Copy the final labels into `buf`, which must hold `len` = sample count.
 */
enum FmvcStatus fmvc_outcome_labels(const struct FmvcOutcome *o, uint32_t *buf, uintptr_t len);

/**
 * Number of round records (rounds + 1, counting the pre-training round).
 */
uintptr_t fmvc_outcome_records(const struct FmvcOutcome *o);

/**
 * Scores after record `index`; `Unavailable` when the dataset had no labels.
 */
enum FmvcStatus fmvc_outcome_metrics(const struct FmvcOutcome *o,
                                     uintptr_t index,
                                     struct FmvcScores *out);

/**
 * Round records as JSON lines, NUL-terminated. `needed` receives the byte
 * count including the terminator; a short `cap` returns `BufferTooSmall`
 * so the caller can retry.
 */
enum FmvcStatus fmvc_outcome_records_json(const struct FmvcOutcome *o,
                                          char *buf,
                                          uintptr_t cap,
                                          uintptr_t *needed);

void fmvc_outcome_free(struct FmvcOutcome *o);

/**
 * ACC, NMI and ARI of `pred` against `truth`, both of length `n`.
 */
enum FmvcStatus fmvc_evaluate(const uint32_t *pred,
                              const uint32_t *truth,
                              uintptr_t n,
                              struct FmvcScores *out);

enum FmvcStatus fmvc_accuracy(const uint32_t *pred,
                              const uint32_t *truth,
                              uintptr_t n,
                              double *out);

enum FmvcStatus fmvc_nmi(const uint32_t *pred, const uint32_t *truth, uintptr_t n, double *out);

enum FmvcStatus fmvc_ari(const uint32_t *pred, const uint32_t *truth, uintptr_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDMVC_H */
