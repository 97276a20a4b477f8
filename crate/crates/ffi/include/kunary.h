#ifndef KUNARY_H
#define KUNARY_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes shared by every entry point.
typedef enum KunaryStatus {
  KUNARY_STATUS_OK = 0,
  KUNARY_STATUS_NULL_POINTER = 1,
  KUNARY_STATUS_INVALID_UTF8 = 2,
  KUNARY_STATUS_PARSE = 3,
  KUNARY_STATUS_NON_IRREDUCIBLE = 4,
  KUNARY_STATUS_BAD_ARITY = 5,
  KUNARY_STATUS_NEGATIVE_RATE = 6,
  KUNARY_STATUS_MALFORMED = 7,
  KUNARY_STATUS_OVERFLOW = 8,
  KUNARY_STATUS_SINGULAR_SYSTEM = 9,
  KUNARY_STATUS_NO_CONVERGENCE = 10,
  KUNARY_STATUS_NO_SLOW_SPECIES = 11,
  KUNARY_STATUS_EMPTY_FAST_SET = 12,
  KUNARY_STATUS_DIMENSION_MISMATCH = 13,
  KUNARY_STATUS_INVALID_ARGUMENT = 14,
  KUNARY_STATUS_NON_POSITIVE = 15,
  KUNARY_STATUS_EVENT_BUDGET_EXCEEDED = 16,
  KUNARY_STATUS_BUFFER_TOO_SMALL = 17,
  KUNARY_STATUS_IO = 18,
  KUNARY_STATUS_OTHER = 98,
  KUNARY_STATUS_PANIC = 99,
} KunaryStatus;

// Opaque network handle.
typedef struct KunaryNetwork KunaryNetwork;

// Opaque handle to a simulated path and its scaled version.
typedef struct KunaryTrajectory KunaryTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *kunary_version(void);

// Copies the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `cap`) and returns the full message length in bytes.
//
// # Safety
// `buf` must be null or point to `cap` writable bytes.
size_t kunary_last_error(char *buf, size_t cap);

// Parses a JSON network document into a new handle.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum KunaryStatus kunary_network_from_json(const char *json, struct KunaryNetwork **out);

// Releases a network handle; null is ignored.
//
// # Safety
// `net` must come from [`kunary_network_from_json`] and not be used afterwards.
void kunary_network_free(struct KunaryNetwork *net);

// Number of species `n`.
//
// # Safety
// Pointers must be valid.
enum KunaryStatus kunary_network_species(const struct KunaryNetwork *net, size_t *out);

// Invariant vector `z` and its roots `ℓ` (each of length `n`), plus the
// balance residual.
//
// # Safety
// `z_out` and `ell_out` must hold `len` doubles; `residual_out` may be null.
enum KunaryStatus kunary_equilibrium(const struct KunaryNetwork *net,
                                     double *z_out,
                                     double *ell_out,
                                     size_t len,
                                     double *residual_out);

// Eliminates all fast species. Writes the surviving labels (starting with
// 0) and the row-major rate matrix. `dim_out` always receives the
// dimension, so a call with `cap = 0` can be used to size the buffers
// (`labels` needs `dim`, `rates` needs `dim * dim`).
//
// # Safety
// Buffers must hold `cap` labels and `cap * cap` rates.
enum KunaryStatus kunary_reduce_to_slow(const struct KunaryNetwork *net,
                                        size_t *labels,
                                        double *rates,
                                        size_t cap,
                                        size_t *dim_out);

// Fast-equilibrium map `L(y)`; `y` follows the increasing order of the
// arity-one species and `ell_out` that of the others.
//
// # Safety
// `y` must hold `y_len` doubles and `ell_out` `len` doubles.
enum KunaryStatus kunary_fast_map(const struct KunaryNetwork *net,
                                  const double *y,
                                  size_t y_len,
                                  double *ell_out,
                                  size_t len);

// Endpoint of the slow ODE started from `alpha` (arity-one species only).
// `h <= 0` selects the default step `10⁻³ T`.
//
// # Safety
// `alpha` and `out` must hold `len` doubles.
enum KunaryStatus kunary_slow_ode_endpoint(const struct KunaryNetwork *net,
                                           const double *alpha,
                                           size_t len,
                                           double t_end,
                                           double h,
                                           double *out);

// Relative entropy `F(z)` of the network's rate matrix at `z` (length `n`).
//
// # Safety
// `z` must hold `len` doubles; `out` must be writable.
enum KunaryStatus kunary_entropy(const struct KunaryNetwork *net,
                                 const double *z,
                                 size_t len,
                                 double *out);

// Simulates on `[0, t_end]` from counts `x0` (length `n`) and returns a new
// trajectory handle. Deterministic in `seed`.
//
// # Safety
// `x0` must hold `len` values; `out` must be writable.
enum KunaryStatus kunary_simulate(const struct KunaryNetwork *net,
                                  uint64_t big_n,
                                  const uint64_t *x0,
                                  size_t len,
                                  double t_end,
                                  uint64_t seed,
                                  struct KunaryTrajectory **out);

// Releases a trajectory handle; null is ignored.
//
// # Safety
// `traj` must come from [`kunary_simulate`] and not be used afterwards.
void kunary_trajectory_free(struct KunaryTrajectory *traj);

// Number of events.
//
// # Safety
// Pointers must be valid.
enum KunaryStatus kunary_trajectory_events(const struct KunaryTrajectory *traj, size_t *out);

// Counts at the horizon.
//
// # Safety
// `out` must hold `len` values.
enum KunaryStatus kunary_trajectory_final_state(const struct KunaryTrajectory *traj,
                                                uint64_t *out,
                                                size_t len);

// `(1/(t − eta)) ∫_eta^t X̄_species(s) ds` of the scaled path; `species` is
// 1-based.
//
// # Safety
// Pointers must be valid.
enum KunaryStatus kunary_trajectory_time_average(const struct KunaryTrajectory *traj,
                                                 size_t species,
                                                 double eta,
                                                 double t,
                                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KUNARY_H */
