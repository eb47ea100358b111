/*
 * C interface to the residual-flow density estimator and OOD detector.
 *
 * All objects are opaque handles owned by the caller and released with the
 * matching *_free function. Every fallible call returns an rf_status; on
 * failure rf_last_error() describes the problem for the calling thread.
 */
#ifndef RESFLOW_H
#define RESFLOW_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(RESFLOW_BUILDING)
#    define RF_API __declspec(dllexport)
#  else
#    define RF_API __declspec(dllimport)
#  endif
#else
#  define RF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rf_status {
  RF_OK = 0,
  RF_ERR_INVALID_ARGUMENT = 1,
  RF_ERR_IO = 2,
  RF_ERR_BAD_MAGIC = 3,
  RF_ERR_TRUNCATED = 4,
  RF_ERR_DIM_MISMATCH = 5,
  RF_ERR_NUMERIC = 6,
  RF_ERR_STATE = 7,
  RF_ERR_UNSUPPORTED_VERSION = 8,
  RF_ERR_INTERNAL = 99
} rf_status;

typedef struct rf_featureset rf_featureset;
typedef struct rf_detector rf_detector;
typedef struct rf_gda rf_gda;

RF_API const char* rf_version(void);
RF_API const char* rf_status_name(rf_status status);
/* Message of the last failed call on this thread; "" if none. */
RF_API const char* rf_last_error(void);

/* ---- feature sets ------------------------------------------------------ */

typedef struct rf_synth_spec {
  const char* kind; /* gaussian | banana | ring | mixture | shifted-ood */
  size_t dim;
  size_t n; /* per class for mixture */
  size_t classes;
  double sep;
  double offset; /* shift along the last coordinate */
  int flip;      /* shifted-ood: negate the banana curvature */
  double radius;
  double noise;
  int per_class_cov; /* mixture: 0 tied identity, 1 per-class diagonal */
  size_t layers;
  uint64_t layer_seed;
  uint64_t seed;
} rf_synth_spec;

RF_API void rf_synth_spec_default(rf_synth_spec* spec);
/* Comma-separated list of generator kinds. */
RF_API const char* rf_synth_kinds(void);
RF_API rf_status rf_synth(const rf_synth_spec* spec, rf_featureset** out);

/* Single-layer feature set from a row-major n x d buffer. labels may be NULL. */
RF_API rf_status rf_featureset_create(const char* dataset, size_t n, size_t d, const double* data,
                                      const uint32_t* labels, size_t class_count,
                                      rf_featureset** out);
RF_API rf_status rf_featureset_read(const char* path, rf_featureset** out);
RF_API rf_status rf_featureset_write(const rf_featureset* fs, const char* path);
RF_API void rf_featureset_free(rf_featureset* fs);

typedef struct rf_featureset_info {
  size_t samples;
  size_t layers;
  size_t classes;
  int has_labels;
  int has_perturbed;
  int has_splits;
} rf_featureset_info;

RF_API rf_status rf_featureset_info_get(const rf_featureset* fs, rf_featureset_info* info);
RF_API rf_status rf_featureset_layer_dim(const rf_featureset* fs, size_t layer, size_t* dim);
/* Stratified split tags; fractions must sum to 1. */
RF_API rf_status rf_featureset_split(rf_featureset* fs, double train, double val, double test,
                                     uint64_t seed);

/* ---- detector ---------------------------------------------------------- */

typedef struct rf_fit_config {
  size_t n_blocks;
  size_t hidden; /* 0: max(2 * floor(k / 2), 32) */
  double clamp;
  double rank_tol;
  double learning_rate;
  size_t batch_size;
  size_t max_epochs;
  size_t eval_interval;
  size_t patience;
  double val_fraction;
  uint64_t seed;
  int baseline_only;
  size_t parallel; /* 0: all cores */
} rf_fit_config;

RF_API void rf_fit_config_default(rf_fit_config* cfg);

typedef void (*rf_record_fn)(void* user, size_t layer, size_t cls, size_t epoch, size_t step,
                             double train_ll, double val_ll);
/* `current` is only valid during the call. */
typedef void (*rf_checkpoint_fn)(void* user, size_t epoch, const rf_detector* current);

typedef struct rf_fit_callbacks {
  rf_record_fn on_record;
  rf_checkpoint_fn on_checkpoint;
  size_t checkpoint_every; /* epochs; checkpoints also fire at epoch 0 */
  void* user;
} rf_fit_callbacks;

/* callbacks may be NULL. */
RF_API rf_status rf_detector_fit(const rf_featureset* train, const rf_fit_config* cfg,
                                 const rf_fit_callbacks* callbacks, rf_detector** out);
RF_API rf_status rf_detector_save(const rf_detector* det, const char* dir);
RF_API rf_status rf_detector_load(const char* dir, rf_detector** out);
RF_API void rf_detector_free(rf_detector* det);

typedef enum rf_perturb_mode {
  RF_PERTURB_OFF = 0,
  RF_PERTURB_FEATURE_SPACE = 1,
  RF_PERTURB_PRECOMPUTED = 2
} rf_perturb_mode;

typedef struct rf_detector_info {
  size_t layers;
  size_t classes;
  double epsilon;
  double bias;
  rf_perturb_mode perturb_mode;
  int baseline_only;
} rf_detector_info;

RF_API rf_status rf_detector_info_get(const rf_detector* det, rf_detector_info* info);
/* Copies min(cap, layers) weights. */
RF_API rf_status rf_detector_alpha(const rf_detector* det, double* alpha, size_t cap);
RF_API rf_status rf_detector_set_weights(rf_detector* det, const double* alpha, size_t n,
                                         double bias);
RF_API rf_status rf_detector_set_perturbation(rf_detector* det, rf_perturb_mode mode,
                                              double epsilon);

typedef enum rf_method { RF_METHOD_RESFLOW = 0, RF_METHOD_MAHALANOBIS = 1 } rf_method;

/* scores must hold fs samples; combined with the detector's weights. */
RF_API rf_status rf_detector_score(const rf_detector* det, const rf_featureset* fs,
                                   rf_method method, double* scores, size_t n);
/* Row-major samples x layers matrix of layer scores. */
RF_API rf_status rf_detector_layer_scores(const rf_detector* det, const rf_featureset* fs,
                                          rf_method method, double* out, size_t cap);

typedef struct rf_tune_result {
  double epsilon;
  double auroc;
  int weak; /* best validation AUROC < 0.6 */
} rf_tune_result;

/* candidate_auroc (nullable) receives one AUROC per grid entry. */
RF_API rf_status rf_detector_tune(rf_detector* det, const rf_featureset* val_in,
                                  const rf_featureset* val_out, const double* eps_grid,
                                  size_t n_eps, rf_tune_result* result, double* candidate_auroc);

/* ---- GDA baseline (per-class covariance) ------------------------------- */

/* Fitted on the train-split rows of every layer. */
RF_API rf_status rf_gda_fit(const rf_featureset* train, rf_gda** out);
/* Mean over layers of max_c log N_c(phi). */
RF_API rf_status rf_gda_score(const rf_gda* gda, const rf_featureset* fs, double* scores,
                              size_t n);
RF_API void rf_gda_free(rf_gda* gda);

/* ---- metrics ----------------------------------------------------------- */

typedef struct rf_eval_report {
  double tnr_at_tpr95;
  double auroc;
  double detection_accuracy;
  double aupr_in;
  double aupr_out;
} rf_eval_report;

RF_API rf_status rf_evaluate(const double* in_scores, size_t n_in, const double* out_scores,
                             size_t n_out, rf_eval_report* report);
/* With fpr/tpr NULL only *n_points is set. Otherwise cap must be >= the count. */
RF_API rf_status rf_roc_curve(const double* in_scores, size_t n_in, const double* out_scores,
                              size_t n_out, double* fpr, double* tpr, size_t cap,
                              size_t* n_points);

#ifdef __cplusplus
}
#endif

#endif /* RESFLOW_H */
