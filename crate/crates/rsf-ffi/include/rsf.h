#ifndef RSF_H
#define RSF_H

/* Generated from the rsf-ffi crate; edit src/lib.rs instead of this file. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result class of an FFI call.
 */
typedef enum RsfStatus {
  /**
   * The call succeeded.
   */
  RSF_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  RSF_STATUS_NULL_ARGUMENT = 1,
  /**
   * Arguments were readable but inconsistent or unphysical.
   */
  RSF_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The computation started but failed to converge or left the valid
   * domain.
   */
  RSF_STATUS_NUMERICAL_FAILURE = 3,
  /**
   * An internal invariant failed; the library state is still sound.
   */
  RSF_STATUS_INTERNAL = 4,
  /**
   * A scenario file could not be read or parsed.
   */
  RSF_STATUS_SCENARIO_PARSE = 10,
  /**
   * A scenario file parsed but failed validation.
   */
  RSF_STATUS_SCENARIO_VALIDATION = 11,
  /**
   * A scenario run failed or a compare verdict did not pass.
   */
  RSF_STATUS_SCENARIO_RUNTIME = 12,
} RsfStatus;

/**
 * Generator of the reduced kinetic equations.
 */
typedef struct RsfGenerator RsfGenerator;

/**
 * Reduced field state: density matrix plus averaged amplitude.
 */
typedef struct RsfState RsfState;

/**
 * Result of one integration run: grid, states, and diagnostics.
 */
typedef struct RsfTrajectory RsfTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on the calling thread. The pointer is
 * valid until the next failing call on this thread; copy it if it must
 * outlive that.
 */
const char *rsf_last_error_message(void);

/**
 * Library version as a static NUL-terminated string; never freed.
 */
const char *rsf_version(void);

/**
 * Creates a reduced state from `rho` (`2 dim^2` doubles) and optional
 * `alpha` (`2 dim` doubles; null means zero amplitude). `tol <= 0` selects
 * the library default positivity tolerance.
 *
 * # Safety
 * `rho` must point to `2 dim^2` readable doubles and `alpha`, when non-null,
 * to `2 dim`; `out` must be writable.
 */
enum RsfStatus rsf_state_new(size_t dim,
                             const double *rho,
                             const double *alpha,
                             double tol,
                             struct RsfState **out);

/**
 * Releases a state handle; null is a no-op.
 *
 * # Safety
 * `state` must be null or a pointer returned by this library and not yet
 * freed.
 */
void rsf_state_free(struct RsfState *state);

/**
 * Number of modes of a state.
 *
 * # Safety
 * `state` must be a live handle and `out` writable.
 */
enum RsfStatus rsf_state_dim(const struct RsfState *state, size_t *out);

/**
 * Copies the density matrix into `out` (`2 dim^2` doubles).
 *
 * # Safety
 * `state` must be a live handle; `out` must have room for `2 dim^2` doubles.
 */
enum RsfStatus rsf_state_rho(const struct RsfState *state, double *out);

/**
 * Copies the averaged amplitude into `out` (`2 dim` doubles).
 *
 * # Safety
 * `state` must be a live handle; `out` must have room for `2 dim` doubles.
 */
enum RsfStatus rsf_state_alpha(const struct RsfState *state, double *out);

/**
 * Field entropy of the state (Boltzmann constant 1).
 *
 * # Safety
 * `state` must be a live handle and `out` writable.
 */
enum RsfStatus rsf_state_entropy(const struct RsfState *state, double *out);

/**
 * Total particle number `tr rho`.
 *
 * # Safety
 * `state` must be a live handle and `out` writable.
 */
enum RsfStatus rsf_state_particle_number(const struct RsfState *state, double *out);

/**
 * Creates a generator from its blocks. `h` is required (`2 dim^2` doubles);
 * `gamma_down`, `gamma_up`, and `xi` may be null for zero. Scattering and
 * diffusion families are passed as parallel arrays: `n` weights plus `n`
 * concatenated `2 dim^2`-double matrices.
 *
 * # Safety
 * All non-null pointers must cover the documented element counts; `out`
 * must be writable.
 */
enum RsfStatus rsf_generator_new(size_t dim,
                                 const double *h,
                                 const double *gamma_down,
                                 const double *gamma_up,
                                 const double *xi,
                                 size_t n_scattering,
                                 const double *scattering_weights,
                                 const double *scattering_unitaries,
                                 size_t n_diffusion,
                                 const double *diffusion_weights,
                                 const double *diffusion_generators,
                                 struct RsfGenerator **out);

/**
 * Releases a generator handle; null is a no-op.
 *
 * # Safety
 * `generator` must be null or a pointer returned by this library and not
 * yet freed.
 */
void rsf_generator_free(struct RsfGenerator *generator);

/**
 * Number of modes the generator acts on.
 *
 * # Safety
 * `generator` must be a live handle and `out` writable.
 */
enum RsfStatus rsf_generator_dim(const struct RsfGenerator *generator, size_t *out);

/**
 * Integrates the kinetic equations from `initial` over the strictly
 * increasing grid `times` (`n_times >= 1` entries). `local_error <= 0`
 * selects the library default.
 *
 * # Safety
 * Handles must be live, `times` must cover `n_times` doubles, and `out`
 * must be writable.
 */
enum RsfStatus rsf_evolve(const struct RsfGenerator *generator,
                          const struct RsfState *initial,
                          const double *times,
                          size_t n_times,
                          double hbar,
                          double local_error,
                          struct RsfTrajectory **out);

/**
 * Releases a trajectory handle; null is a no-op.
 *
 * # Safety
 * `trajectory` must be null or a pointer returned by this library and not
 * yet freed.
 */
void rsf_trajectory_free(struct RsfTrajectory *trajectory);

/**
 * Number of grid points in the trajectory.
 *
 * # Safety
 * `trajectory` must be a live handle and `out` writable.
 */
enum RsfStatus rsf_trajectory_len(const struct RsfTrajectory *trajectory, size_t *out);

/**
 * Copies the time grid into `out` (`len` doubles).
 *
 * # Safety
 * `trajectory` must be a live handle; `out` must have room for `len`
 * doubles.
 */
enum RsfStatus rsf_trajectory_times(const struct RsfTrajectory *trajectory, double *out);

/**
 * Clones the state at grid index `index` into a fresh handle.
 *
 * # Safety
 * `trajectory` must be a live handle and `out` writable.
 */
enum RsfStatus rsf_trajectory_state(const struct RsfTrajectory *trajectory,
                                    size_t index,
                                    struct RsfState **out);

/**
 * Diagnostics at grid index `index`. Each out-pointer may be null to skip
 * that value: entropy, particle number, purity defect
 * (`max |rho - |alpha><alpha||`), and the smallest correlation eigenvalue.
 *
 * # Safety
 * `trajectory` must be a live handle; non-null out-pointers must be
 * writable.
 */
enum RsfStatus rsf_trajectory_diagnostics(const struct RsfTrajectory *trajectory,
                                          size_t index,
                                          double *out_entropy,
                                          double *out_particle_number,
                                          double *out_purity_defect,
                                          double *out_min_eig_corr);

/**
 * Renders the trajectory as CSV into a caller-owned string.
 *
 * # Safety
 * `trajectory` must be a live handle and `out` writable; release the result
 * with `rsf_string_free`.
 */
enum RsfStatus rsf_trajectory_csv(const struct RsfTrajectory *trajectory, char **out);

/**
 * Releases a string returned by this library; null is a no-op.
 *
 * # Safety
 * `text` must be null or a string pointer returned by this library and not
 * yet freed.
 */
void rsf_string_free(char *text);

/**
 * Detailed-balance upward rates for a rotating thermal bath: mode `k` gets
 * `gamma_up[k] = exp(-hbar (omega[k] - m[k] rotation) / (k_b temperature))
 * * gamma_down[k]`.
 *
 * # Safety
 * `omegas`, `gamma_downs`, `ms`, and `out_gamma_up` must each cover
 * `n_modes` elements.
 */
enum RsfStatus rsf_thermal_rates(size_t n_modes,
                                 const double *omegas,
                                 const double *gamma_downs,
                                 const int64_t *ms,
                                 double temperature,
                                 double rotation,
                                 double hbar,
                                 double k_b,
                                 double *out_gamma_up);

/**
 * Mueller matrix (16 doubles, row-major) of the pure polarization map with
 * Jones matrix `jones` (8 doubles, interleaved row-major).
 *
 * # Safety
 * `jones` must cover 8 doubles and `out_mueller` 16.
 */
enum RsfStatus rsf_mueller_from_jones(const double *jones, double *out_mueller);

/**
 * Runs a scenario file like `rsf run`. `out_dir` may be null for the
 * current directory; `tol` NaN and `seed < 0` leave the file's settings in
 * place. On success, when `out_summary` is non-null it receives the
 * caller-owned one-line summary. A failed compare verdict returns
 * `ScenarioRuntime` after writing the outputs.
 *
 * # Safety
 * `path` and, when non-null, `out_dir` must be NUL-terminated UTF-8;
 * `out_summary`, when non-null, must be writable.
 */
enum RsfStatus rsf_scenario_run(const char *path,
                                const char *out_dir,
                                double tol,
                                int64_t seed,
                                char **out_summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RSF_H */
