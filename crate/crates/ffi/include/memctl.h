#ifndef MEMCTL_H
#define MEMCTL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MemctlCostKind {
  /**
   * `p0`.
   */
  MEMCTL_COST_KIND_CONSTANT = 0,
  /**
   * `min(p0 x^2, p2) + p1 u^2`.
   */
  MEMCTL_COST_KIND_QUADRATIC = 1,
  /**
   * `p0 min(|x|, p2)`.
   */
  MEMCTL_COST_KIND_SATURATED = 2,
} MemctlCostKind;

typedef enum MemctlStatus {
  MEMCTL_STATUS_OK = 0,
  MEMCTL_STATUS_NULL_POINTER = 1,
  MEMCTL_STATUS_INVALID_ARGUMENT = 2,
  MEMCTL_STATUS_DIMENSION_MISMATCH = 3,
  /**
   * Blow-up, non-contraction or no convergence.
   */
  MEMCTL_STATUS_NUMERICAL = 4,
  /**
   * Point outside the domain of an operator or grid.
   */
  MEMCTL_STATUS_DOMAIN = 5,
  MEMCTL_STATUS_IO = 6,
  MEMCTL_STATUS_PANIC = 7,
} MemctlStatus;

typedef struct MemctlHistory MemctlHistory;

typedef struct MemctlKernel MemctlKernel;

typedef struct MemctlReducedGrid MemctlReducedGrid;

typedef struct MemctlTrajectory MemctlTrajectory;

typedef struct MemctlKernelNorms {
  double l1;
  double l2;
  /**
   * `NaN` unless the kernel is smooth.
   */
  double dl2;
} MemctlKernelNorms;

/**
 * `F(x, u, a) = state x + control u + memory a + offset`.
 */
typedef struct MemctlAffineDrift {
  double state;
  double control;
  double memory;
  double offset;
} MemctlAffineDrift;

typedef struct MemctlCost {
  enum MemctlCostKind kind;
  double p0;
  double p1;
  double p2;
  /**
   * Discount rate.
   */
  double lambda;
} MemctlCost;

/**
 * Box and iteration parameters of the reduced solver.
 */
typedef struct MemctlReducedParams {
  double delta;
  double x_min;
  double x_max;
  double y_min;
  double y_max;
  size_t nx;
  size_t ny;
  double dt;
  double tol;
  size_t max_iter;
} MemctlReducedParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *memctl_last_error(void);

/**
 * `coeff e^{-rate s}`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MemctlStatus memctl_kernel_exponential(double rate, double coeff, struct MemctlKernel **out);

/**
 * `sum_i coeffs[i] e^{-rates[i] s}`.
 *
 * # Safety
 * `rates` and `coeffs` must hold `n` values; `out` must be valid.
 */
enum MemctlStatus memctl_kernel_sum_of_exponentials(const double *rates,
                                                    const double *coeffs,
                                                    size_t n,
                                                    struct MemctlKernel **out);

/**
 * Piecewise-linear table `samples[j] = A(j step)`, zero beyond.
 *
 * # Safety
 * `samples` must hold `n` values; `out` must be valid.
 */
enum MemctlStatus memctl_kernel_tabulated(double step,
                                          const double *samples,
                                          size_t n,
                                          bool smooth,
                                          struct MemctlKernel **out);

/**
 * # Safety
 * `kernel` must come from a `memctl_kernel_*` constructor; `out` must be valid.
 */
enum MemctlStatus memctl_kernel_norms(const struct MemctlKernel *kernel,
                                      struct MemctlKernelNorms *out);

/**
 * # Safety
 * `kernel` must be null or an unreleased handle.
 */
void memctl_kernel_free(struct MemctlKernel *kernel);

/**
 * Scalar point `(x, z)` with `z[j] = z(j step)`. A positive `tail_rate`
 * continues `z` by exponential decay past the last sample, otherwise by zero.
 *
 * # Safety
 * `z` must hold `n` values; `out` must be valid.
 */
enum MemctlStatus memctl_history_new(double x,
                                     const double *z,
                                     size_t n,
                                     double step,
                                     double tail_rate,
                                     struct MemctlHistory **out);

/**
 * # Safety
 * `history` must be null or an unreleased handle.
 */
void memctl_history_free(struct MemctlHistory *history);

/**
 * Solves the scalar affine state equation from `history` with the control
 * `controls[indices[i]]` on the `i`-th of `n_indices` equal pieces of `[0, horizon]`.
 *
 * # Safety
 * Arrays must hold the stated number of values; handles must be live.
 */
enum MemctlStatus memctl_solve_cauchy_affine(struct MemctlAffineDrift drift,
                                             const double *controls,
                                             size_t n_controls,
                                             const struct MemctlKernel *kernel,
                                             const struct MemctlHistory *history,
                                             const size_t *indices,
                                             size_t n_indices,
                                             double horizon,
                                             double h,
                                             struct MemctlTrajectory **out);

/**
 * Number of time nodes.
 *
 * # Safety
 * `traj` must be a live handle; `out` must be valid.
 */
enum MemctlStatus memctl_trajectory_len(const struct MemctlTrajectory *traj, size_t *out);

/**
 * Copies `min(len, nodes)` states into `buf`.
 *
 * # Safety
 * `buf` must have room for `len` values.
 */
enum MemctlStatus memctl_trajectory_states(const struct MemctlTrajectory *traj,
                                           double *buf,
                                           size_t len);

/**
 * # Safety
 * `traj` must be null or an unreleased handle.
 */
void memctl_trajectory_free(struct MemctlTrajectory *traj);

/**
 * Best discounted cost over piecewise-constant controls with `intervals`
 * pieces on `[0, control_horizon]` (the whole horizon when `control_horizon <= 0`).
 *
 * # Safety
 * Arrays must hold the stated number of values; handles must be live.
 */
enum MemctlStatus memctl_value_estimate(struct MemctlAffineDrift drift,
                                        const double *controls,
                                        size_t n_controls,
                                        struct MemctlCost cost,
                                        const struct MemctlKernel *kernel,
                                        const struct MemctlHistory *history,
                                        size_t intervals,
                                        double control_horizon,
                                        double horizon,
                                        double h,
                                        double *out);

/**
 * `<B alpha, alpha>`.
 *
 * # Safety
 * `history` must be live; `out` must be valid.
 */
enum MemctlStatus memctl_b_norm_sq(const struct MemctlHistory *history, double *out);

/**
 * `<T B alpha, alpha>`.
 *
 * # Safety
 * `history` must be live; `out` must be valid.
 */
enum MemctlStatus memctl_tb_form(const struct MemctlHistory *history, double *out);

/**
 * `||z||_{(H^1)'}` of the past component.
 *
 * # Safety
 * `history` must be live; `out` must be valid.
 */
enum MemctlStatus memctl_dual_h1_norm(const struct MemctlHistory *history, double *out);

/**
 * Value iteration for the two-dimensional problem with kernel `e^{-delta s}`.
 *
 * # Safety
 * `controls` must hold `n_controls` values; `out` must be valid.
 */
enum MemctlStatus memctl_solve_reduced_hjb(struct MemctlAffineDrift drift,
                                           const double *controls,
                                           size_t n_controls,
                                           struct MemctlCost cost,
                                           struct MemctlReducedParams params,
                                           struct MemctlReducedGrid **out);

/**
 * Bilinear value of the reduced grid at `(x, y)`.
 *
 * # Safety
 * `grid` must be live; `out` must be valid.
 */
enum MemctlStatus memctl_reduced_value_at(const struct MemctlReducedGrid *grid,
                                          double x,
                                          double y,
                                          double *out);

/**
 * Sweeps performed before convergence.
 *
 * # Safety
 * `grid` must be live; `out` must be valid.
 */
enum MemctlStatus memctl_reduced_iterations(const struct MemctlReducedGrid *grid, size_t *out);

/**
 * # Safety
 * `grid` must be null or an unreleased handle.
 */
void memctl_reduced_grid_free(struct MemctlReducedGrid *grid);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEMCTL_H */
