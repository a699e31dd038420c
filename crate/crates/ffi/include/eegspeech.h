#ifndef EEGSPEECH_H
#define EEGSPEECH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum EsStatus {
  ES_STATUS_OK = 0,
  ES_STATUS_NULL_POINTER = 1,
  ES_STATUS_INVALID_ARGUMENT = 2,
  ES_STATUS_SHAPE_MISMATCH = 3,
  ES_STATUS_NOT_FOUND = 4,
  ES_STATUS_INVALID_STATE = 5,
  ES_STATUS_RANK_DEFICIENT = 6,
  ES_STATUS_UNDEFINED_METRIC = 7,
  ES_STATUS_PARSE_ERROR = 8,
  ES_STATUS_MISSING_PREREQUISITE = 9,
  ES_STATUS_IO_ERROR = 10,
  ES_STATUS_BUFFER_TOO_SMALL = 11,
  ES_STATUS_PANIC = 12,
} EsStatus;

// Cascade of second-order IIR sections.
typedef struct EsFilter EsFilter;

// Fitted kernel PCA.
typedef struct EsKpca EsKpca;

// Character n-gram language model.
typedef struct EsLanguageModel EsLanguageModel;

// Sequence network loaded from a checkpoint.
typedef struct EsModel EsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until
// the next call into this library on the same thread.
const char *es_last_error(void);

// Library version as a static NUL-terminated string.
const char *es_version(void);

// Size of the default CTC output layer (28 characters + blank).
size_t es_alphabet_symbols(void);

// Trains a character n-gram model over the default alphabet.
//
// # Safety
// `sentences` must point to `n` valid NUL-terminated strings; `out` must be writable.
enum EsStatus es_lm_train(const char *const *sentences,
                          size_t n,
                          size_t order,
                          double k,
                          struct EsLanguageModel **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum EsStatus es_lm_load(const char *path, struct EsLanguageModel **out);

// # Safety
// `lm` must be a live handle; `path` a NUL-terminated string.
enum EsStatus es_lm_save(const struct EsLanguageModel *lm, const char *path);

// Natural-log probability of `next` (a Unicode scalar) after `context`.
//
// # Safety
// `lm` must be a live handle; `context` a NUL-terminated string; `out` writable.
enum EsStatus es_lm_logprob(const struct EsLanguageModel *lm,
                            const char *context,
                            uint32_t next,
                            double *out);

// # Safety
// `lm` must be null or a handle not yet freed.
void es_lm_free(struct EsLanguageModel *lm);

// Fits kernel PCA (cubic polynomial kernel) on `rows x cols` data.
//
// # Safety
// `x` must hold `rows * cols` doubles; `out` must be writable.
enum EsStatus es_kpca_fit(const double *x,
                          size_t n_rows,
                          size_t n_cols,
                          size_t n_components,
                          double gamma,
                          double coef0,
                          struct EsKpca **out);

// Projects `rows x cols` queries into `out` (`rows x n_components`).
//
// # Safety
// `k` must be live; `x` must hold `rows * cols` doubles; `out` `out_len` doubles.
enum EsStatus es_kpca_transform(const struct EsKpca *k,
                                const double *x,
                                size_t n_rows,
                                size_t n_cols,
                                double *out,
                                size_t out_len);

// # Safety
// `k` must be live; `out` writable.
enum EsStatus es_kpca_n_components(const struct EsKpca *k, size_t *out);

// Cumulative explained-variance ratios; `*written` receives the usable rank.
//
// # Safety
// `k` must be live; `out` must hold `out_len` doubles; `written` writable.
enum EsStatus es_kpca_explained_variance(const struct EsKpca *k,
                                         double *out,
                                         size_t out_len,
                                         size_t *written);

// # Safety
// `k` must be null or a handle not yet freed.
void es_kpca_free(struct EsKpca *k);

// Butterworth bandpass of total order `order`.
//
// # Safety
// `out` must be writable.
enum EsStatus es_filter_bandpass(double low_hz,
                                 double high_hz,
                                 size_t order,
                                 double sample_rate_hz,
                                 struct EsFilter **out);

// Second-order notch at `f0_hz` with quality factor `q`.
//
// # Safety
// `out` must be writable.
enum EsStatus es_filter_notch(double f0_hz, double q, double sample_rate_hz, struct EsFilter **out);

// Filters `n` samples from zero initial state into `output`.
//
// # Safety
// `f` must be live; `input` and `output` must hold `n` doubles.
enum EsStatus es_filter_apply(const struct EsFilter *f,
                              const double *input,
                              size_t n,
                              double *output);

// Analytic gain in decibels at `freq_hz`.
//
// # Safety
// `f` must be live; `out` writable.
enum EsStatus es_filter_gain_db(const struct EsFilter *f, double freq_hz, double *out);

// # Safety
// `f` must be null or a handle not yet freed.
void es_filter_free(struct EsFilter *f);

// Loads a model checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string; `out` writable.
enum EsStatus es_model_load(const char *path, struct EsModel **out);

// Input and output widths of a model.
//
// # Safety
// `m` must be live; `d_in` and `d_out` writable.
enum EsStatus es_model_dims(const struct EsModel *m, size_t *d_in, size_t *d_out);

// Inference pass over a `frames x d_in` sequence into `frames x d_out`.
//
// # Safety
// `m` must be live and not used concurrently; `x` must hold
// `frames * d_in` doubles and `out` `out_len` doubles.
enum EsStatus es_model_forward(struct EsModel *m,
                               const double *x,
                               size_t frames,
                               size_t d_in,
                               double *out,
                               size_t out_len);

// # Safety
// `m` must be null or a handle not yet freed.
void es_model_free(struct EsModel *m);

// CTC negative log-likelihood of `label` under `frames x symbols`
// log-probabilities; `grad` (nullable) receives the logit gradient.
// Infeasible labels give `+inf` and a zero gradient.
//
// # Safety
// `log_probs` must hold `frames * symbols` doubles, `label` `label_len`
// indices, `grad` (when non-null) `frames * symbols` doubles, `loss` writable.
enum EsStatus es_ctc_loss(const double *log_probs,
                          size_t frames,
                          size_t symbols,
                          const size_t *label,
                          size_t label_len,
                          size_t blank,
                          double *loss,
                          double *grad);

// Prefix beam search over the default alphabet (`symbols` must equal
// [`es_alphabet_symbols`]) with optional shallow fusion. Writes a
// NUL-terminated UTF-8 transcript; `*written` receives its byte length
// without the terminator, also when the buffer is too small.
//
// # Safety
// `log_probs` must hold `frames * symbols` doubles; `lm` null or live;
// `buf` must hold `buf_len` bytes; `written` writable.
enum EsStatus es_ctc_decode(const double *log_probs,
                            size_t frames,
                            size_t symbols,
                            size_t beam_width,
                            const struct EsLanguageModel *lm,
                            double lm_weight,
                            char *buf,
                            size_t buf_len,
                            size_t *written);

// Corpus word error rate in percent.
//
// # Safety
// `references` and `hypotheses` must each point to `n` NUL-terminated strings; `out` writable.
enum EsStatus es_wer(const char *const *references,
                     const char *const *hypotheses,
                     size_t n,
                     double *out);

// Five window statistics: RMS, zero-crossing rate, mean window amplitude,
// kurtosis and normalized power spectral entropy, in that order.
//
// # Safety
// `window` must hold `n` doubles; `out` must hold 5 doubles.
enum EsStatus es_window_stats(const double *window, size_t n, double sample_rate_hz, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EEGSPEECH_H */
