#ifndef CPLEARN_H
#define CPLEARN_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every exported function.
 */
typedef enum CplStatus {
  CPL_STATUS_OK = 0,
  CPL_STATUS_NULL_POINTER = 1,
  CPL_STATUS_INVALID_ARGUMENT = 2,
  CPL_STATUS_SHAPE_MISMATCH = 3,
  CPL_STATUS_NON_FINITE = 4,
  CPL_STATUS_IO = 5,
  CPL_STATUS_FORMAT = 6,
  CPL_STATUS_DATA = 7,
  CPL_STATUS_CONFIG = 8,
  CPL_STATUS_CONSTRUCTION = 9,
  CPL_STATUS_DEGENERATE_BATCH = 10,
  CPL_STATUS_INTERNAL = 11,
  CPL_STATUS_PANIC = 12,
} CplStatus;

/**
 * Prior-term variant of the objective.
 */
typedef enum CplLossVariant {
  CPL_LOSS_VARIANT_FORWARD_CE = 0,
  CPL_LOSS_VARIANT_REVERSE_KL = 1,
} CplLossVariant;

/**
 * Opaque handle to a frozen code dictionary.
 */
typedef struct CplDictionary CplDictionary;

/**
 * Opaque handle to a training session.
 */
typedef struct CplTrainer CplTrainer;

typedef struct CplOrthogonalityStats {
  double mean_offdiag_cosine;
  double var_offdiag_cosine;
  double max_abs_offdiag_cosine;
  double theoretical_var;
  size_t pairs;
} CplOrthogonalityStats;

typedef struct CplLossBreakdown {
  double invariance;
  double prior_matching;
  double total;
  double lower_bound;
  double certificate_gap;
  bool invariance_floored;
  bool prior_floored;
} CplLossBreakdown;

typedef struct CplLemma1Summary {
  double invariance_residual;
  double extrema_residual;
  double prior_residual;
  double min_row_max;
  double loss_gap;
  double final_loss;
  bool converged;
  bool cluster_collapse;
} CplLemma1Summary;

typedef struct CplEpochSummary {
  uint64_t epoch;
  size_t steps;
  double invariance;
  double prior_matching;
  double total;
  double lower_bound;
  double z_max_abs_mean;
  double z_max_std;
} CplEpochSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cpl_version(void);

/**
 * Message of the last failure on this thread, or null if the last call succeeded.
 *
 * The pointer stays valid until the next call into the library on this thread.
 */
const char *cpl_last_error_message(void);

/**
 * Softmax temperature placing `1 - eps (c-1)` on an aligned code.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `double`.
 */
enum CplStatus cpl_temperature(size_t f, size_t n, size_t c, double epsilon, double *out);

/**
 * Rademacher dictionary with `f` rows and `c` codes.
 *
 * # Safety
 * `out` must be null or point to writable memory for one handle pointer.
 */
enum CplStatus cpl_dictionary_sample(size_t f, size_t c, uint64_t seed, struct CplDictionary **out);

/**
 * Sylvester-Hadamard dictionary of order `f` (a power of two).
 *
 * # Safety
 * `out` must be null or point to writable memory for one handle pointer.
 */
enum CplStatus cpl_dictionary_hadamard(size_t f, struct CplDictionary **out);

/**
 * Releases a dictionary. Null is ignored.
 *
 * # Safety
 * `dict` must be null or a handle returned by this library and not yet freed.
 */
void cpl_dictionary_free(struct CplDictionary *dict);

/**
 * # Safety
 * `dict` must be a live handle; `f_out` and `c_out` must be null or writable.
 */
enum CplStatus cpl_dictionary_dims(const struct CplDictionary *dict, size_t *f_out, size_t *c_out);

/**
 * Copies the `f x c` code matrix in row-major order into `buf`.
 *
 * # Safety
 * `dict` must be a live handle; `buf` must hold `len` doubles.
 */
enum CplStatus cpl_dictionary_codes(const struct CplDictionary *dict, double *buf, size_t len);

/**
 * # Safety
 * `dict` must be a live handle; `out` must be null or writable.
 */
enum CplStatus cpl_dictionary_cosine_stats(const struct CplDictionary *dict,
                                           struct CplOrthogonalityStats *out_stats);

/**
 * Objective value for two row-stochastic `n x c` matrices in row-major order.
 *
 * A null `prior` means the uniform prior.
 *
 * # Safety
 * `p` and `p_prime` must hold `n * c` doubles, `prior` must be null or hold
 * `c` doubles, and `out` must be writable.
 */
enum CplStatus cpl_loss(const double *p,
                        const double *p_prime,
                        size_t n,
                        size_t c,
                        const double *prior_probs,
                        double beta,
                        double epsilon,
                        enum CplLossVariant variant,
                        struct CplLossBreakdown *out_loss);

/**
 * Normalized mutual information of two labelings of length `len`.
 *
 * # Safety
 * `a` and `b` must hold `len` values; `out` must be writable.
 */
enum CplStatus cpl_nmi(const size_t *a, const size_t *b, size_t len, double *out_nmi);

/**
 * Optimality residuals of a pair of `n x c` probability matrices.
 *
 * When `counts` is non-null it receives the `c` per-code row counts.
 *
 * # Safety
 * `p` and `p_prime` must hold `n * c` doubles, `prior` must be null or hold
 * `c` doubles, `counts` must be null or hold `c` values, `out` must be writable.
 */
enum CplStatus cpl_check_lemma1(const double *p,
                                const double *p_prime,
                                size_t n,
                                size_t c,
                                const double *prior_probs,
                                double epsilon,
                                double beta,
                                enum CplLossVariant variant,
                                size_t *counts,
                                struct CplLemma1Summary *out_report);

/**
 * Training session from a key-value config text, an input width, and a
 * dictionary (copied; the caller keeps ownership).
 *
 * # Safety
 * `config_text` must be null or NUL-terminated UTF-8, `dict` a live handle,
 * `out` writable. A null config uses the defaults.
 */
enum CplStatus cpl_trainer_new(const char *config_text,
                               size_t input_dim,
                               const struct CplDictionary *dict,
                               struct CplTrainer **out);

/**
 * Restores a training session from a checkpoint file.
 *
 * # Safety
 * `path` must be NUL-terminated UTF-8 and `out` writable.
 */
enum CplStatus cpl_trainer_load_checkpoint(const char *path, struct CplTrainer **out);

/**
 * One shuffled pass over `rows x cols` row-major data.
 *
 * # Safety
 * `trainer` must be a live handle, `data` must hold `rows * cols` doubles,
 * `out` must be null or writable.
 */
enum CplStatus cpl_trainer_train_epoch(struct CplTrainer *trainer,
                                       const double *data,
                                       size_t rows,
                                       size_t cols,
                                       struct CplEpochSummary *out_summary);

/**
 * Backbone representations of `rows x cols` data, written row-major into
 * `buf` of `rows * f` doubles.
 *
 * # Safety
 * `trainer` must be a live handle, `data` must hold `rows * cols` doubles
 * and `buf` must hold `len` doubles.
 */
enum CplStatus cpl_trainer_represent(const struct CplTrainer *trainer,
                                     const double *data,
                                     size_t rows,
                                     size_t cols,
                                     double *buf,
                                     size_t len);

/**
 * Most probable code of every row of `rows x cols` data, written into `codes`.
 *
 * # Safety
 * `trainer` must be a live handle, `data` must hold `rows * cols` doubles
 * and `codes` must hold `rows` values.
 */
enum CplStatus cpl_trainer_assign(const struct CplTrainer *trainer,
                                  const double *data,
                                  size_t rows,
                                  size_t cols,
                                  size_t *codes);

/**
 * # Safety
 * `trainer` must be a live handle and `path` NUL-terminated UTF-8.
 */
enum CplStatus cpl_trainer_save_checkpoint(const struct CplTrainer *trainer, const char *path);

/**
 * Releases a training session. Null is ignored.
 *
 * # Safety
 * `trainer` must be null or a handle returned by this library and not yet freed.
 */
void cpl_trainer_free(struct CplTrainer *trainer);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CPLEARN_H */
