#ifndef MORTPANEL_H
#define MORTPANEL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum MpStatus {
  MP_STATUS_OK = 0,
  MP_STATUS_NULL_POINTER = 1,
  // Invalid arguments or input data.
  MP_STATUS_INVALID_INPUT = 2,
  // Numerical or model failure, e.g. a rank-deficient design.
  MP_STATUS_NUMERICAL = 3,
  // A file could not be read.
  MP_STATUS_IO = 4,
  // An internal panic was caught.
  MP_STATUS_PANIC = 5,
  // The requested value does not exist for this fit.
  MP_STATUS_NOT_AVAILABLE = 6,
  // An output buffer was too small; the required size was reported.
  MP_STATUS_BUFFER_TOO_SMALL = 7,
} MpStatus;

typedef enum MpModelType {
  MP_MODEL_TYPE_B = 0,
  MP_MODEL_TYPE_L = 1,
  MP_MODEL_TYPE_D = 2,
  MP_MODEL_TYPE_HP = 3,
} MpModelType;

typedef enum MpWeights {
  MP_WEIGHTS_POP = 0,
  MP_WEIGHTS_SQRT_POP = 1,
} MpWeights;

// Opaque fitted-model handle.
typedef struct MpFit MpFit;

// Opaque panel handle.
typedef struct MpPanel MpPanel;

// Model specification. `series` is a NUL-terminated key such as "total".
typedef struct MpSpec {
  enum MpModelType model_type;
  uint8_t subtype;
  const char *series;
  double hp_lambda;
  enum MpWeights weights;
  bool apply_icd_correction;
} MpSpec;

// Unemployment effect on the 100·beta scale. Clustered fields are NaN when
// the panel has a single state.
typedef struct MpEffect {
  double effect_100beta;
  double se_ols;
  double se_clustered;
  double p_ols;
  double p_clustered;
} MpEffect;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failure on this thread, or an empty string.
// The pointer stays valid until the next library call on the same thread.
const char *mp_last_error_message(void);

// Loads a panel from the three CSV files.
//
// # Safety
// Path arguments must be NUL-terminated strings; `out` must be writable.
enum MpStatus mp_panel_load(const char *mortality_csv,
                            const char *unemployment_csv,
                            const char *agestructure_csv,
                            struct MpPanel **out);

// Generates a synthetic panel from a simulation config in JSON.
//
// # Safety
// `config_json` must be a NUL-terminated string; `out` must be writable.
enum MpStatus mp_panel_simulate(const char *config_json, struct MpPanel **out);

// Releases a panel. Null is ignored.
//
// # Safety
// `panel` must come from this library and not be used afterwards.
void mp_panel_free(struct MpPanel *panel);

// Number of states, or 0 for a null handle.
//
// # Safety
// `panel` must be null or a live handle.
size_t mp_panel_n_states(const struct MpPanel *panel);

// Number of years, or 0 for a null handle.
//
// # Safety
// `panel` must be null or a live handle.
size_t mp_panel_n_years(const struct MpPanel *panel);

// Fits a model to a panel.
//
// # Safety
// `panel` and `spec` must be live; `out` must be writable.
enum MpStatus mp_fit(const struct MpPanel *panel, const struct MpSpec *spec, struct MpFit **out);

// Releases a fit. Null is ignored.
//
// # Safety
// `fit` must come from this library and not be used afterwards.
void mp_fit_free(struct MpFit *fit);

// Number of coefficients, or 0 for a null handle.
//
// # Safety
// `fit` must be null or a live handle.
size_t mp_fit_n_coefficients(const struct MpFit *fit);

// Estimate and standard errors of coefficient `index`. `se_clustered` is
// NaN when unavailable. Any output pointer may be null.
//
// # Safety
// `fit` must be live; non-null outputs must be writable.
enum MpStatus mp_fit_coefficient(const struct MpFit *fit,
                                 size_t index,
                                 double *estimate,
                                 double *se_ols,
                                 double *se_clustered);

// Copies the label of coefficient `index` into `buf` as a NUL-terminated
// string. `needed` (if non-null) receives the size including the NUL; a
// short buffer yields `BufferTooSmall` and leaves `buf` untouched.
//
// # Safety
// `fit` must be live; `buf` must hold `buf_len` bytes.
enum MpStatus mp_fit_coefficient_label(const struct MpFit *fit,
                                       size_t index,
                                       char *buf,
                                       size_t buf_len,
                                       size_t *needed);

// Effect of state unemployment (`national` false) or national
// unemployment (`national` true). `NotAvailable` if the spec lacks it.
//
// # Safety
// `fit` must be live; `out` must be writable.
enum MpStatus mp_fit_effect(const struct MpFit *fit, bool national, struct MpEffect *out);

// AIC of the fit; `NotAvailable` for a perfect fit.
//
// # Safety
// `fit` must be live; `out` must be writable.
enum MpStatus mp_fit_aic(const struct MpFit *fit, double *out);

// Number of residuals (design rows), or 0 for a null handle.
//
// # Safety
// `fit` must be null or a live handle.
size_t mp_fit_n_residuals(const struct MpFit *fit);

// Copies the natural-scale residuals, state-major, into `out[0..len]`.
// `len` must equal [`mp_fit_n_residuals`].
//
// # Safety
// `fit` must be live; `out` must hold `len` doubles.
enum MpStatus mp_fit_residuals(const struct MpFit *fit, double *out, size_t len);

// Serialises the full fit as JSON. Free the string with [`mp_string_free`].
//
// # Safety
// `fit` must be live; `out` must be writable.
enum MpStatus mp_fit_to_json(const struct MpFit *fit, char **out);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void mp_string_free(char *s);

// HP filter of `x[0..n]`; writes the trend and the residual (cycle).
// Either output may be null.
//
// # Safety
// `x` must hold `n` doubles; non-null outputs must hold `n` doubles.
enum MpStatus mp_hp_filter(const double *x,
                           size_t n,
                           double lambda,
                           double *trend_out,
                           double *residual_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MORTPANEL_H */
