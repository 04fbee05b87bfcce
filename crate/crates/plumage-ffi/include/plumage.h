/* C interface for the plumage low-rank gradient estimator. */

#ifndef PLUMAGE_H
#define PLUMAGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Projection construction used by the optimizer.
typedef enum PlumageEstimator {
  PLUMAGE_ESTIMATOR_SAMPLED = 0,
  PLUMAGE_ESTIMATOR_TOP_K = 1,
  PLUMAGE_ESTIMATOR_GAUSSIAN = 2,
} PlumageEstimator;

// Moment family of the optimizer.
typedef enum PlumageFamily {
  PLUMAGE_FAMILY_ADAM = 0,
  PLUMAGE_FAMILY_SGDM = 1,
} PlumageFamily;

// Which moments the optimizer carries across projection updates.
typedef enum PlumageRealign {
  PLUMAGE_REALIGN_NONE = 0,
  PLUMAGE_REALIGN_FIRST_MOMENT = 1,
  PLUMAGE_REALIGN_FIRST_AND_SECOND = 2,
} PlumageRealign;

// Result of every fallible call in this API.
typedef enum PlumageStatus {
  PLUMAGE_STATUS_OK = 0,
  PLUMAGE_STATUS_NULL_POINTER = 1,
  PLUMAGE_STATUS_INVALID_ARGUMENT = 2,
  PLUMAGE_STATUS_DIMENSION_MISMATCH = 3,
  PLUMAGE_STATUS_NON_FINITE = 4,
  PLUMAGE_STATUS_SVD_FAILED = 5,
  PLUMAGE_STATUS_PANIC = 6,
} PlumageStatus;

// Per-layer projected optimizer with its own random stream (opaque).
typedef struct PlumageOptimizer PlumageOptimizer;

// Inclusion-probability plan for one spectrum (opaque).
typedef struct PlumagePlan PlumagePlan;

// Deterministic random source (opaque).
typedef struct PlumageRng PlumageRng;

// Hyperparameters for [`plumage_optimizer_new`].
typedef struct PlumageOptimizerConfig {
  double eta;
  double beta1;
  double beta2;
  double epsilon;
  size_t rank;
  // Steps between gradient decompositions.
  size_t svd_interval;
  // Steps between projection redraws from the cached spectrum.
  size_t resample_interval;
  enum PlumageRealign realign;
  enum PlumageEstimator estimator;
  enum PlumageFamily family;
  // Nonzero enables the adaptive interval controller.
  int32_t adaptive_interval;
  size_t tau_min;
  size_t tau_max;
  size_t truncation_rank;
  double gamma_reset;
  double gamma_shrink;
  double gamma_expand;
  // Learning-rate scale applied only to the top-k estimator.
  double alpha;
} PlumageOptimizerConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread. The pointer is
// valid until the next failing call on the same thread.
const char *plumage_last_error_message(void);

// Library version as a static string.
const char *plumage_version(void);

struct PlumageRng *plumage_rng_new(uint64_t seed);

// # Safety
// `rng` must come from [`plumage_rng_new`] and not have been freed.
void plumage_rng_free(struct PlumageRng *rng);

// Solves for the minimum-variance inclusion probabilities of a descending
// spectrum; on success `*out_plan` owns the result.
//
// # Safety
// `sigma` must point to `len` doubles; `out_plan` must be a valid pointer.
enum PlumageStatus plumage_plan_new(const double *sigma,
                                    size_t len,
                                    size_t k,
                                    double eps,
                                    struct PlumagePlan **out_plan);

// Number of leading indices included with probability one.
//
// # Safety
// `plan` must come from [`plumage_plan_new`].
size_t plumage_plan_deterministic_rank(const struct PlumagePlan *plan);

// Copies the inclusion probabilities into `out` (`len` must equal the
// spectrum length).
//
// # Safety
// `plan` from [`plumage_plan_new`]; `out` must hold `len` doubles.
enum PlumageStatus plumage_plan_probabilities(const struct PlumagePlan *plan,
                                              double *out,
                                              size_t len);

// # Safety
// `plan` must come from [`plumage_plan_new`] and not have been freed.
void plumage_plan_free(struct PlumagePlan *plan);

// Draws exactly `k` distinct indices with the plan's marginals into
// `out_indices` (ascending order). `k` must equal the plan's target rank.
//
// # Safety
// All pointers must be valid; `out_indices` must hold `k` entries.
enum PlumageStatus plumage_sample_indices(const struct PlumagePlan *plan,
                                          struct PlumageRng *rng,
                                          size_t *out_indices,
                                          size_t k);

// Estimator variance `sum (1/p_i - 1) sigma_i^2`; infinite if some positive
// singular value has zero probability.
//
// # Safety
// `sigma` and `p` must each point to `len` doubles.
double plumage_analytic_variance(const double *sigma, const double *p, size_t len);

// One-shot unbiased rank-`k` estimate of a row-major `rows x cols` gradient:
// decompose, solve the plan, sample a projection, and write `P D⁻¹ Pᵀ G`
// into `out`.
//
// # Safety
// `gradient` and `out` must each point to `rows * cols` doubles.
enum PlumageStatus plumage_estimate(const double *gradient,
                                    size_t rows,
                                    size_t cols,
                                    size_t k,
                                    struct PlumageRng *rng,
                                    double *out);

// Mean cosine of the principal angles between two column-stacked orthonormal
// bases (`ambient x r1` and `ambient x r2`, row-major), truncated to
// `truncation_rank` leading columns.
//
// # Safety
// Basis buffers must hold `ambient * r` doubles each; `out_rho` valid.
enum PlumageStatus plumage_mean_cosine_principal_angle(const double *basis1,
                                                       size_t r1,
                                                       const double *basis2,
                                                       size_t r2,
                                                       size_t ambient,
                                                       size_t truncation_rank,
                                                       double *out_rho);

// Hysteresis interval update; see the optimizer configuration for threshold
// semantics.
//
// # Safety
// `out_tau` must be a valid pointer.
enum PlumageStatus plumage_update_interval(size_t tau,
                                           double rho,
                                           size_t tau_min,
                                           size_t tau_max,
                                           double gamma_reset,
                                           double gamma_shrink,
                                           double gamma_expand,
                                           size_t *out_tau);

// Fills `out` with defaults for the given rank, decomposition interval, and
// learning rate: Adam family, sampled estimator, full realignment.
//
// # Safety
// `out` must be a valid pointer.
enum PlumageStatus plumage_optimizer_config_default(size_t rank,
                                                    size_t svd_interval,
                                                    double eta,
                                                    struct PlumageOptimizerConfig *out);

// Creates a projected optimizer for one `rows x cols` weight. The projection
// side is chosen from the shape; `seed` fixes the sampling stream.
//
// # Safety
// `config` and `out` must be valid pointers.
enum PlumageStatus plumage_optimizer_new(size_t rows,
                                         size_t cols,
                                         const struct PlumageOptimizerConfig *config,
                                         uint64_t seed,
                                         struct PlumageOptimizer **out);

// Applies one optimizer step, updating `weights` in place from `gradient`
// (both row-major `rows x cols`, matching the constructor).
//
// # Safety
// `weights` and `gradient` must each point to `rows * cols` doubles.
enum PlumageStatus plumage_optimizer_step(struct PlumageOptimizer *opt,
                                          double *weights,
                                          const double *gradient,
                                          size_t rows,
                                          size_t cols);

// Updates the learning rate (for external schedules).
//
// # Safety
// `opt` must come from [`plumage_optimizer_new`].
enum PlumageStatus plumage_optimizer_set_eta(struct PlumageOptimizer *opt, double eta);

// Completed steps.
//
// # Safety
// `opt` must come from [`plumage_optimizer_new`].
uint64_t plumage_optimizer_step_count(const struct PlumageOptimizer *opt);

// Current decomposition interval (changes only when the adaptive controller
// is enabled).
//
// # Safety
// `opt` must come from [`plumage_optimizer_new`].
size_t plumage_optimizer_current_interval(const struct PlumageOptimizer *opt);

// # Safety
// `opt` must come from [`plumage_optimizer_new`] and not have been freed.
void plumage_optimizer_free(struct PlumageOptimizer *opt);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PLUMAGE_H */
