#ifndef QACQ_H
#define QACQ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Acquisition families, numbered for C callers.
typedef enum QacqAcqKind {
  QACQ_ACQ_KIND_EI = 0,
  QACQ_ACQ_KIND_PI = 1,
  QACQ_ACQ_KIND_SR = 2,
  QACQ_ACQ_KIND_UCB = 3,
  QACQ_ACQ_KIND_ES = 4,
  QACQ_ACQ_KIND_KG = 5,
} QacqAcqKind;

// How a batch is selected.
typedef enum QacqSelection {
  QACQ_SELECTION_GREEDY = 0,
  QACQ_SELECTION_JOINT = 1,
} QacqSelection;

// Result of every fallible call.
typedef enum QacqStatus {
  QACQ_STATUS_OK = 0,
  QACQ_STATUS_NULL_POINTER = 1,
  QACQ_STATUS_INVALID_INPUT = 2,
  QACQ_STATUS_CONFIG = 3,
  QACQ_STATUS_NOT_POSITIVE_DEFINITE = 4,
  QACQ_STATUS_NUMERICAL = 5,
  QACQ_STATUS_DEGENERATE_QUERY = 6,
  QACQ_STATUS_FIT = 7,
  QACQ_STATUS_IO = 8,
  QACQ_STATUS_PANIC = 9,
} QacqStatus;

// Acquisition function settings.
typedef struct QacqAcquisition QacqAcquisition;

// Gaussian-process posterior.
typedef struct QacqModel QacqModel;

// Objective function on the unit cube (to be maximized).
typedef struct QacqTask QacqTask;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *qacq_version(void);

// Copies the last error message of this thread into `buf` (truncating, always
// NUL-terminated when `len > 0`). Returns the full message length in bytes,
// or 0 if the last call succeeded.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t qacq_last_error_message(char *buf, size_t len);

// GP posterior with a Matérn-5/2 kernel on `n` observations in `d`
// dimensions. `lengthscales` has `d` entries.
//
// # Safety
// `inputs` must hold `n * d` doubles, `outputs` `n`, `lengthscales` `d`.
enum QacqStatus qacq_model_new(const double *inputs,
                               size_t n,
                               size_t d,
                               const double *outputs,
                               const double *lengthscales,
                               double signal_variance,
                               double noise_variance,
                               double mean_constant,
                               struct QacqModel **out);

// # Safety
// `model` must be null or come from [`qacq_model_new`], freed once.
void qacq_model_free(struct QacqModel *model);

// Posterior mean and variance at a single point.
//
// # Safety
// `x` must hold `d` doubles; `mean` and `variance` must be writable.
enum QacqStatus qacq_model_marginal(const struct QacqModel *model,
                                    const double *x,
                                    double *mean,
                                    double *variance);

// Acquisition settings. `alpha` is the improvement threshold (EI, PI),
// `beta` the UCB confidence parameter, `tau` the PI/ES temperature.
// ES and KG also need [`qacq_acquisition_set_discretization`].
enum QacqStatus qacq_acquisition_new(enum QacqAcqKind kind,
                                     double alpha,
                                     double beta,
                                     double tau,
                                     size_t mc_samples,
                                     struct QacqAcquisition **out);

// Sets the `b x d` discretization used by ES and KG.
//
// # Safety
// `acq` must be a live handle; `points` must hold `b * d` doubles.
enum QacqStatus qacq_acquisition_set_discretization(struct QacqAcquisition *acq,
                                                    const double *points,
                                                    size_t b,
                                                    size_t d);

// # Safety
// `acq` must be null or come from [`qacq_acquisition_new`], freed once.
void qacq_acquisition_free(struct QacqAcquisition *acq);

// Monte Carlo estimate of the acquisition at the `q x d` batch `x` with
// base samples drawn from `seed`. `gradient` may be null; otherwise it
// receives `q * d` doubles.
//
// # Safety
// Handles must be live; `x` must hold `q * d` doubles; `value` and
// `std_error` must be writable.
enum QacqStatus qacq_acquisition_evaluate(const struct QacqAcquisition *acq,
                                          const struct QacqModel *model,
                                          const double *x,
                                          size_t q,
                                          uint64_t seed,
                                          double *value,
                                          double *std_error,
                                          double *gradient);

// Selects a batch of `q` points in the unit cube with an evaluation budget
// and writes it to `x_out` (`q * d` doubles) and its value to `value`.
//
// # Safety
// Handles must be live; `x_out` must hold `q * d` doubles; `value` writable.
enum QacqStatus qacq_select(const struct QacqAcquisition *acq,
                            const struct QacqModel *model,
                            size_t q,
                            enum QacqSelection mode,
                            size_t budget_evals,
                            uint64_t seed,
                            double *x_out,
                            double *value);

// Builds a task by name (`synthetic`, `branin`, `hartmann3`, `hartmann6`,
// `levy`); synthetic draws depend on `seed`.
//
// # Safety
// `name` must be a NUL-terminated string.
enum QacqStatus qacq_task_new(const char *name, size_t d, uint64_t seed, struct QacqTask **out);

// # Safety
// `task` must be null or come from [`qacq_task_new`], freed once.
void qacq_task_free(struct QacqTask *task);

// Input dimension, or 0 for a null handle.
//
// # Safety
// `task` must be null or live.
size_t qacq_task_dim(const struct QacqTask *task);

// Noise-free value at `x` in the unit cube.
//
// # Safety
// `x` must hold `dim` doubles; `value` must be writable.
enum QacqStatus qacq_task_evaluate(const struct QacqTask *task, const double *x, double *value);

// Maximum used for regret.
//
// # Safety
// `value` must be writable.
enum QacqStatus qacq_task_optimum(const struct QacqTask *task, double *value);

// Runs every trial of a JSON run configuration and writes the CSV to
// `out_path` with its `.meta.json` sidecar.
//
// # Safety
// Both arguments must be NUL-terminated strings.
enum QacqStatus qacq_run(const char *config_json, const char *out_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QACQ_H */
