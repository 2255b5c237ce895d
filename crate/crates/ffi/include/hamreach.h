#ifndef HAMREACH_H
#define HAMREACH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum HrStatus {
  HR_STATUS_OK = 0,
  HR_STATUS_NULL_POINTER = 1,
  HR_STATUS_INVALID_ARGUMENT = 2,
  HR_STATUS_DIMENSION = 3,
  HR_STATUS_DIVERGED = 4,
  HR_STATUS_BUDGET = 5,
  HR_STATUS_NOT_HURWITZ = 6,
  HR_STATUS_ILL_POSED = 7,
  HR_STATUS_NOT_POSITIVE = 8,
  HR_STATUS_NO_CONVERGENCE = 9,
  HR_STATUS_NOT_CONFINING = 10,
  HR_STATUS_DEGENERATE_PROJECTION = 11,
  HR_STATUS_UNSUPPORTED = 12,
  HR_STATUS_NUMERICAL = 13,
  HR_STATUS_PANIC = 14,
} HrStatus;

/**
 * Opaque domain handle.
 */
typedef struct HrDomain HrDomain;

/**
 * Opaque model handle.
 */
typedef struct HrModel HrModel;

/**
 * Mean first exit time estimate.
 */
typedef struct HrMfet {
  double mean;
  double stderr;
  uint64_t n;
  uint64_t timeout_count;
} HrMfet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *hr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hr_version(void);

/**
 * Creates a model by catalog name (`double-pendulum`, `ou:a=1`, ...).
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HrStatus hr_model_new(const char *name, struct HrModel **out);

/**
 * # Safety
 * `model` must come from [`hr_model_new`] and not be used afterwards.
 */
void hr_model_free(struct HrModel *model);

/**
 * State dimension, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t hr_model_dim(const struct HrModel *model);

/**
 * Resolves a domain: a named domain of the model, `ball:r=<v>[:i,j]`,
 * `above:[x<i>=]<v>`, `below:[x<i>=]<v>`, optionally prefixed by `not:`.
 *
 * # Safety
 * `model` must be a live handle, `spec` NUL-terminated, `out` valid.
 */
enum HrStatus hr_domain_new(const struct HrModel *model, const char *spec, struct HrDomain **out);

/**
 * # Safety
 * `domain` must come from [`hr_domain_new`] and not be used afterwards.
 */
void hr_domain_free(struct HrDomain *domain);

/**
 * Level `c(x)`; the domain is `{c < 0}`.
 *
 * # Safety
 * `x` must point to `n` doubles and `out` to one.
 */
enum HrStatus hr_domain_level(const struct HrDomain *domain,
                              const double *x,
                              size_t n,
                              double *out);

/**
 * Drift `(J − D)∇H(x)` of a Hamiltonian model.
 *
 * # Safety
 * `x` and `out` must point to `n` doubles each.
 */
enum HrStatus hr_drift(const struct HrModel *model, const double *x, size_t n, double *out);

/**
 * Controllability function `L(x) = H(x) − H(x₀)`.
 *
 * # Safety
 * `x` must point to `n` doubles and `out` to one.
 */
enum HrStatus hr_controllability(const struct HrModel *model,
                                 const double *x,
                                 size_t n,
                                 double *out);

/**
 * HJB residual `f·∇L + |∇L|²_D` at `x`.
 *
 * # Safety
 * `x` must point to `n` doubles and `out` to one.
 */
enum HrStatus hr_hjb_residual(const struct HrModel *model, const double *x, size_t n, double *out);

/**
 * Mean first exit time from `domain` over `trials` Euler–Maruyama runs.
 *
 * # Safety
 * `x0` must point to `n` doubles; handles must be live; `out` valid.
 */
enum HrStatus hr_mfet(const struct HrModel *model,
                      const struct HrDomain *domain,
                      double eps,
                      const double *x0,
                      size_t n,
                      uint64_t trials,
                      double dt,
                      double t_max,
                      uint64_t seed,
                      struct HrMfet *out);

/**
 * Gramian `Σ` of the model's linear companion, written row-major into
 * `sigma` (`len` must equal `n²`).
 *
 * # Safety
 * `sigma` must point to `len` doubles.
 */
enum HrStatus hr_lyapunov(const struct HrModel *model, double *sigma, size_t len);

/**
 * Infimum of `L` over the boundary of `domain` (64 starts). `argmin` must
 * hold `n` doubles. Returns `NoConvergence` when no start converged.
 *
 * # Safety
 * Handles must be live; `value` valid; `argmin` points to `n` doubles.
 */
enum HrStatus hr_boundary_infimum(const struct HrModel *model,
                                  const struct HrDomain *domain,
                                  uint64_t seed,
                                  double *value,
                                  double *argmin,
                                  size_t n);

/**
 * Free energy of the positions `z` (length `dim/2`) at noise level `eps`,
 * normalized to 0 at the equilibrium. `closed_form` selects the Gaussian
 * formula instead of the tensor grid.
 *
 * # Safety
 * `z` must point to `k` doubles and `out` to one.
 */
enum HrStatus hr_free_energy(const struct HrModel *model,
                             const double *z,
                             size_t k,
                             double eps,
                             bool closed_form,
                             double *out);

/**
 * True when the model is one of the Hamiltonian (port-Hamiltonian) models.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
bool hr_model_is_hamiltonian(const struct HrModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HAMREACH_H */
