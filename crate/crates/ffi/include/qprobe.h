/* C interface to the qprobe quadrature-moment extraction library. */

#ifndef QPROBE_H
#define QPROBE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of a library call. `InvalidInput` and `NumericalBreakdown` carry
// the same meaning as the CLI exit codes 2 and 3.
typedef enum QpStatus {
  // The call succeeded and all out parameters are valid.
  QP_STATUS_OK = 0,
  // A parameter, scenario file or state was rejected before compute.
  QP_STATUS_INVALID_INPUT = 2,
  // The computation started but broke down numerically (truncation
  // leakage, non-converged integration, failed factorization).
  QP_STATUS_NUMERICAL_BREAKDOWN = 3,
  // A required pointer argument was null.
  QP_STATUS_NULL_POINTER = 4,
  // A string argument was not valid UTF-8.
  QP_STATUS_INVALID_UTF8 = 5,
  // An internal invariant failed; the library state is still consistent,
  // but the call did nothing.
  QP_STATUS_PANICKED = 6,
} QpStatus;

// Opaque field-state handle: a validated density operator on one or two
// truncated modes, together with its truncation leakage.
typedef struct QpField QpField;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Version of the underlying library as a static string. Do not free.
const char *qp_version(void);

// Message of the most recent failure on the calling thread, or null if no
// call has failed yet. The returned copy is owned by the caller; release it
// with `qp_string_free`.
char *qp_last_error_message(void);

// Release a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a pointer obtained from this library's string-returning
// functions, not yet freed.
void qp_string_free(char *s);

// Number state |n>.
//
// # Safety
// `out` must be a valid pointer to a `QpField*` slot.
enum QpStatus qp_field_fock(uint32_t n,
                            uint32_t truncation,
                            double leakage_tol,
                            struct QpField **out);

// Coherent state with amplitude `re + i im`.
//
// # Safety
// `out` must be a valid pointer to a `QpField*` slot.
enum QpStatus qp_field_coherent(double re,
                                double im,
                                uint32_t truncation,
                                double leakage_tol,
                                struct QpField **out);

// Thermal mixture with mean occupation `nbar`.
//
// # Safety
// `out` must be a valid pointer to a `QpField*` slot.
enum QpStatus qp_field_thermal(double nbar,
                               uint32_t truncation,
                               double leakage_tol,
                               struct QpField **out);

// Squeezed vacuum with squeeze parameter `r e^{i theta}`.
//
// # Safety
// `out` must be a valid pointer to a `QpField*` slot.
enum QpStatus qp_field_squeezed_vacuum(double r,
                                       double theta,
                                       uint32_t truncation,
                                       double leakage_tol,
                                       struct QpField **out);

// Superposition of opposite coherent states,
// `(|alpha> + e^{i phase} |-alpha>) / norm` with `alpha = re + i im`.
//
// # Safety
// `out` must be a valid pointer to a `QpField*` slot.
enum QpStatus qp_field_cat(double re,
                           double im,
                           double phase,
                           uint32_t truncation,
                           double leakage_tol,
                           struct QpField **out);

// Two-mode squeezed vacuum with squeeze parameter `r`. The handle occupies
// the joint space of both modes with `truncation` levels each.
//
// # Safety
// `out` must be a valid pointer to a `QpField*` slot.
enum QpStatus qp_field_two_mode_squeezed_vacuum(double r,
                                                uint32_t truncation,
                                                double leakage_tol,
                                                struct QpField **out);

// Release a field handle. Null is ignored.
//
// # Safety
// `field` must be null or a handle from a `qp_field_*` constructor, not yet
// freed.
void qp_field_free(struct QpField *field);

// Number of modes the handle occupies, or 0 if `field` is null.
//
// # Safety
// `field` must be null or a live handle.
uint32_t qp_field_modes(const struct QpField *field);

// Probability weight the truncation cut off before renormalization, or NaN
// if `field` is null.
//
// # Safety
// `field` must be null or a live handle.
double qp_field_leakage(const struct QpField *field);

// Quadrature mean `<X_phi>` of a single-mode state, with the estimator's
// error estimate.
//
// # Safety
// `field` must be a live handle; `out_value` and `out_error` must be valid.
enum QpStatus qp_extract_x(const struct QpField *field,
                           double phi,
                           double *out_value,
                           double *out_error);

// Conjugate quadrature mean `<Y_phi>` of a single-mode state, with the
// estimator's error estimate.
//
// # Safety
// `field` must be a live handle; `out_value` and `out_error` must be valid.
enum QpStatus qp_extract_y(const struct QpField *field,
                           double phi,
                           double *out_value,
                           double *out_error);

// Mean photon number of a single-mode state, with the estimator's error
// estimate.
//
// # Safety
// `field` must be a live handle; `out_value` and `out_error` must be valid.
enum QpStatus qp_extract_n(const struct QpField *field, double *out_value, double *out_error);

// Second moments `<X_phi^2>` and `<Y_phi^2>` of a single-mode state.
// Both come from the same two-run protocol and share the error estimate.
//
// # Safety
// `field` must be a live handle; `out_x2`, `out_y2` and `out_error` must be
// valid.
enum QpStatus qp_extract_second_moments(const struct QpField *field,
                                        double phi,
                                        double *out_x2,
                                        double *out_y2,
                                        double *out_error);

// Run the full separability protocol on a two-mode state and evaluate the
// variance-sum criterion with quadrature weight `a0` and sign choices `s1`,
// `s2` (each +1 or -1). `violates` is set when the sum undercuts the
// separable bound `a0^2 + 1/a0^2` by more than `tol`.
//
// # Safety
// `field` must be a live handle; `out_sum`, `out_bound` and `out_violates`
// must be valid.
enum QpStatus qp_check_duan(const struct QpField *field,
                            double a0,
                            double s1,
                            double s2,
                            double tol,
                            double *out_sum,
                            double *out_bound,
                            bool *out_violates);

// Parse, validate and execute a scenario given as TOML text.
//
// `source` labels the text in error messages (pass the file name; null for
// a generic label). When `out_dir` is non-null the artifact tree
// (`results.json` plus per-run CSVs) is written under `<out_dir>/<name>/`
// exactly as the CLI would. When `out_json` is non-null it receives the
// results JSON; release it with `qp_string_free`.
//
// A truncation leakage alarm behaves like the CLI: artifacts and JSON are
// still produced, but the call returns `NumericalBreakdown`.
//
// # Safety
// `toml_text` must be a valid C string; `source` and `out_dir` must each be
// null or a valid C string; `out_json` must be null or a valid pointer to a
// `char*` slot.
enum QpStatus qp_scenario_run(const char *toml_text,
                              const char *source,
                              const char *out_dir,
                              char **out_json);

// Parse and validate a scenario without computing anything. On success
// `out_summary` (if non-null) receives the same cost summary the CLI's
// `validate` subcommand prints; release it with `qp_string_free`.
//
// # Safety
// `toml_text` must be a valid C string; `source` must be null or a valid C
// string; `out_summary` must be null or a valid pointer to a `char*` slot.
enum QpStatus qp_scenario_validate(const char *toml_text, const char *source, char **out_summary);

// Resolve a bundled scenario name or a scenario file path to its TOML text.
// Release the text with `qp_string_free`.
//
// # Safety
// `name_or_path` must be a valid C string; `out_toml` must be a valid
// pointer to a `char*` slot.
enum QpStatus qp_scenario_source(const char *name_or_path, char **out_toml);

// Names and descriptions of the scenarios compiled into the library, one
// per line. Release the text with `qp_string_free`.
//
// # Safety
// `out` must be a valid pointer to a `char*` slot.
enum QpStatus qp_bundled_list(char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QPROBE_H */
