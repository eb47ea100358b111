#include "resflow/resflow.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "resflow/data_io.hpp"
#include "resflow/error.hpp"
#include "resflow/metrics.hpp"
#include "resflow/ood.hpp"

struct rf_featureset {
  resflow::FeatureSet fs;
};

struct rf_detector {
  resflow::Detector det;
};

struct rf_gda {
  resflow::GdaDetector gda;
};

namespace {

thread_local std::string g_last_error;

rf_status to_status(resflow::Errc code) {
  switch (code) {
    case resflow::Errc::invalid_argument: return RF_ERR_INVALID_ARGUMENT;
    case resflow::Errc::io: return RF_ERR_IO;
    case resflow::Errc::bad_magic: return RF_ERR_BAD_MAGIC;
    case resflow::Errc::truncated: return RF_ERR_TRUNCATED;
    case resflow::Errc::dim_mismatch: return RF_ERR_DIM_MISMATCH;
    case resflow::Errc::numeric: return RF_ERR_NUMERIC;
    case resflow::Errc::state: return RF_ERR_STATE;
    case resflow::Errc::unsupported_version: return RF_ERR_UNSUPPORTED_VERSION;
  }
  return RF_ERR_INTERNAL;
}

template <typename Fn>
rf_status guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    fn();
    return RF_OK;
  } catch (const resflow::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return RF_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return RF_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return RF_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (!p) resflow::fail(resflow::Errc::invalid_argument, std::string(what) + " is NULL");
}

resflow::ScoreMethod to_method(rf_method m) {
  switch (m) {
    case RF_METHOD_RESFLOW: return resflow::ScoreMethod::resflow;
    case RF_METHOD_MAHALANOBIS: return resflow::ScoreMethod::mahalanobis;
  }
  resflow::fail(resflow::Errc::invalid_argument, "unknown scoring method");
}

}  // namespace

extern "C" {

const char* rf_version(void) { return "1.0.0"; }

const char* rf_status_name(rf_status status) {
  switch (status) {
    case RF_OK: return "ok";
    case RF_ERR_INVALID_ARGUMENT: return "invalid argument";
    case RF_ERR_IO: return "i/o error";
    case RF_ERR_BAD_MAGIC: return "bad magic";
    case RF_ERR_TRUNCATED: return "truncated";
    case RF_ERR_DIM_MISMATCH: return "dimension mismatch";
    case RF_ERR_NUMERIC: return "numeric error";
    case RF_ERR_STATE: return "invalid state";
    case RF_ERR_UNSUPPORTED_VERSION: return "unsupported version";
    case RF_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* rf_last_error(void) { return g_last_error.c_str(); }

void rf_synth_spec_default(rf_synth_spec* spec) {
  if (!spec) return;
  const resflow::SynthSpec d;
  spec->kind = "gaussian";
  spec->dim = d.dim;
  spec->n = d.n;
  spec->classes = d.classes;
  spec->sep = d.sep;
  spec->offset = d.offset;
  spec->flip = d.flip ? 1 : 0;
  spec->radius = d.radius;
  spec->noise = d.noise;
  spec->per_class_cov = 0;
  spec->layers = d.layers;
  spec->layer_seed = d.layer_seed;
  spec->seed = d.seed;
}

const char* rf_synth_kinds(void) {
  static const std::string list = [] {
    std::string s;
    for (const auto& k : resflow::synth_kinds()) s += (s.empty() ? "" : ",") + k;
    return s;
  }();
  return list.c_str();
}

rf_status rf_synth(const rf_synth_spec* spec, rf_featureset** out) {
  return guarded([&] {
    need(spec, "spec");
    need(out, "out");
    need(spec->kind, "spec->kind");
    resflow::SynthSpec s;
    s.kind = spec->kind;
    s.dim = spec->dim;
    s.n = spec->n;
    s.classes = spec->classes;
    s.sep = spec->sep;
    s.offset = spec->offset;
    s.flip = spec->flip != 0;
    s.radius = spec->radius;
    s.noise = spec->noise;
    s.cov = spec->per_class_cov ? resflow::CovKind::per_class : resflow::CovKind::tied;
    s.layers = spec->layers;
    s.layer_seed = spec->layer_seed;
    s.seed = spec->seed;
    *out = new rf_featureset{resflow::synthesize(s)};
  });
}

rf_status rf_featureset_create(const char* dataset, size_t n, size_t d, const double* data,
                               const uint32_t* labels, size_t class_count, rf_featureset** out) {
  return guarded([&] {
    need(out, "out");
    need(data, "data");
    resflow::FeatureSet fs;
    fs.dataset = dataset ? dataset : "";
    fs.class_count = class_count;
    fs.layers.push_back(resflow::FeatureLayer{
        "0", resflow::Matrix(n, d, std::vector<double>(data, data + n * d)), std::nullopt});
    if (labels) fs.labels.assign(labels, labels + n);
    resflow::validate(fs);
    *out = new rf_featureset{std::move(fs)};
  });
}

rf_status rf_featureset_read(const char* path, rf_featureset** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new rf_featureset{resflow::read_featureset(path)};
  });
}

rf_status rf_featureset_write(const rf_featureset* fs, const char* path) {
  return guarded([&] {
    need(fs, "featureset");
    need(path, "path");
    resflow::write_featureset(fs->fs, path);
  });
}

void rf_featureset_free(rf_featureset* fs) { delete fs; }

rf_status rf_featureset_info_get(const rf_featureset* fs, rf_featureset_info* info) {
  return guarded([&] {
    need(fs, "featureset");
    need(info, "info");
    info->samples = fs->fs.size();
    info->layers = fs->fs.layers.size();
    info->classes = fs->fs.class_count;
    info->has_labels = fs->fs.has_labels() ? 1 : 0;
    info->has_perturbed = fs->fs.has_perturbed() ? 1 : 0;
    info->has_splits = fs->fs.splits.empty() ? 0 : 1;
  });
}

rf_status rf_featureset_layer_dim(const rf_featureset* fs, size_t layer, size_t* dim) {
  return guarded([&] {
    need(fs, "featureset");
    need(dim, "dim");
    resflow::require(layer < fs->fs.layers.size(), resflow::Errc::invalid_argument,
                     "layer index out of range");
    *dim = fs->fs.layers[layer].data.cols();
  });
}

rf_status rf_featureset_split(rf_featureset* fs, double train, double val, double test,
                              uint64_t seed) {
  return guarded([&] {
    need(fs, "featureset");
    fs->fs = resflow::split(fs->fs, {train, val, test}, seed);
  });
}

void rf_fit_config_default(rf_fit_config* cfg) {
  if (!cfg) return;
  const resflow::FlowConfig d;
  cfg->n_blocks = d.n_blocks;
  cfg->hidden = d.hidden;
  cfg->clamp = d.clamp;
  cfg->rank_tol = d.rank_tol;
  cfg->learning_rate = d.train.learning_rate;
  cfg->batch_size = d.train.batch_size;
  cfg->max_epochs = d.train.max_epochs;
  cfg->eval_interval = d.train.eval_interval;
  cfg->patience = d.train.patience;
  cfg->val_fraction = d.val_fraction;
  cfg->seed = d.train.seed;
  cfg->baseline_only = d.baseline_only ? 1 : 0;
  cfg->parallel = d.parallel;
}

rf_status rf_detector_fit(const rf_featureset* train, const rf_fit_config* cfg,
                          const rf_fit_callbacks* callbacks, rf_detector** out) {
  return guarded([&] {
    need(train, "train");
    need(cfg, "cfg");
    need(out, "out");
    resflow::FlowConfig fc;
    fc.n_blocks = cfg->n_blocks;
    fc.hidden = cfg->hidden;
    fc.clamp = cfg->clamp;
    fc.rank_tol = cfg->rank_tol;
    fc.train.learning_rate = cfg->learning_rate;
    fc.train.batch_size = cfg->batch_size;
    fc.train.max_epochs = cfg->max_epochs;
    fc.train.eval_interval = cfg->eval_interval;
    fc.train.patience = cfg->patience;
    fc.train.seed = cfg->seed;
    fc.val_fraction = cfg->val_fraction;
    fc.baseline_only = cfg->baseline_only != 0;
    fc.parallel = cfg->parallel;

    resflow::FitHooks hooks;
    if (callbacks && callbacks->on_record) {
      hooks.on_record = [callbacks](std::size_t l, std::size_t c, const resflow::TrainRecord& r) {
        callbacks->on_record(callbacks->user, l, c, r.epoch, r.step, r.train_ll, r.val_ll);
      };
    }
    if (callbacks && callbacks->on_checkpoint) {
      hooks.checkpoint_every = callbacks->checkpoint_every;
      hooks.on_checkpoint = [callbacks, &fc](std::size_t epoch,
                                             const std::vector<resflow::LayerModel>& models) {
        rf_detector current{resflow::make_detector(models, fc.baseline_only)};
        callbacks->on_checkpoint(callbacks->user, epoch, &current);
      };
    }
    auto models = resflow::fit_layer_models(train->fs, fc, hooks);
    *out = new rf_detector{resflow::make_detector(std::move(models), fc.baseline_only)};
  });
}

rf_status rf_detector_save(const rf_detector* det, const char* dir) {
  return guarded([&] {
    need(det, "detector");
    need(dir, "dir");
    resflow::save_detector(det->det, dir);
  });
}

rf_status rf_detector_load(const char* dir, rf_detector** out) {
  return guarded([&] {
    need(dir, "dir");
    need(out, "out");
    *out = new rf_detector{resflow::load_detector(dir)};
  });
}

void rf_detector_free(rf_detector* det) { delete det; }

rf_status rf_detector_info_get(const rf_detector* det, rf_detector_info* info) {
  return guarded([&] {
    need(det, "detector");
    need(info, "info");
    const auto& d = det->det;
    info->layers = d.layers.size();
    info->classes = d.layers.empty() ? 0 : d.layers.front().class_count();
    info->epsilon = d.epsilon;
    info->bias = d.bias;
    info->perturb_mode = static_cast<rf_perturb_mode>(static_cast<int>(d.perturb_mode));
    info->baseline_only = d.baseline_only ? 1 : 0;
  });
}

rf_status rf_detector_alpha(const rf_detector* det, double* alpha, size_t cap) {
  return guarded([&] {
    need(det, "detector");
    need(alpha, "alpha");
    const auto& a = det->det.alpha;
    std::memcpy(alpha, a.data(), std::min(cap, a.size()) * sizeof(double));
  });
}

rf_status rf_detector_set_weights(rf_detector* det, const double* alpha, size_t n, double bias) {
  return guarded([&] {
    need(det, "detector");
    need(alpha, "alpha");
    resflow::require(n == det->det.layers.size(), resflow::Errc::dim_mismatch,
                     "weight count does not match layer count");
    det->det.alpha.assign(alpha, alpha + n);
    det->det.bias = bias;
  });
}

rf_status rf_detector_set_perturbation(rf_detector* det, rf_perturb_mode mode, double epsilon) {
  return guarded([&] {
    need(det, "detector");
    resflow::require(epsilon >= 0.0, resflow::Errc::invalid_argument, "epsilon must be >= 0");
    resflow::require(mode >= RF_PERTURB_OFF && mode <= RF_PERTURB_PRECOMPUTED,
                     resflow::Errc::invalid_argument, "unknown perturbation mode");
    det->det.perturb_mode = static_cast<resflow::PerturbMode>(static_cast<int>(mode));
    det->det.epsilon = epsilon;
  });
}

rf_status rf_detector_score(const rf_detector* det, const rf_featureset* fs, rf_method method,
                            double* scores, size_t n) {
  return guarded([&] {
    need(det, "detector");
    need(fs, "featureset");
    need(scores, "scores");
    resflow::require(n >= fs->fs.size(), resflow::Errc::invalid_argument,
                     "score buffer smaller than the feature set");
    const auto s = resflow::combine_scores(det->det, resflow::score_layers(det->det, fs->fs, to_method(method)));
    std::memcpy(scores, s.data(), s.size() * sizeof(double));
  });
}

rf_status rf_detector_layer_scores(const rf_detector* det, const rf_featureset* fs,
                                   rf_method method, double* out, size_t cap) {
  return guarded([&] {
    need(det, "detector");
    need(fs, "featureset");
    need(out, "out");
    const auto m = resflow::score_layers(det->det, fs->fs, to_method(method));
    resflow::require(cap >= m.data().size(), resflow::Errc::invalid_argument,
                     "layer score buffer too small");
    std::memcpy(out, m.data().data(), m.data().size() * sizeof(double));
  });
}

rf_status rf_detector_tune(rf_detector* det, const rf_featureset* val_in,
                           const rf_featureset* val_out, const double* eps_grid, size_t n_eps,
                           rf_tune_result* result, double* candidate_auroc) {
  return guarded([&] {
    need(det, "detector");
    need(val_in, "val_in");
    need(val_out, "val_out");
    need(eps_grid, "eps_grid");
    need(result, "result");
    const auto r = resflow::tune_detector(det->det, val_in->fs, val_out->fs,
                                          std::span<const double>(eps_grid, n_eps));
    result->epsilon = r.epsilon;
    result->auroc = r.auroc;
    result->weak = r.weak ? 1 : 0;
    if (candidate_auroc)
      for (std::size_t i = 0; i < r.candidates.size() && i < n_eps; ++i)
        candidate_auroc[i] = r.candidates[i].auroc;
  });
}

rf_status rf_gda_fit(const rf_featureset* train, rf_gda** out) {
  return guarded([&] {
    need(train, "train");
    need(out, "out");
    *out = new rf_gda{resflow::fit_gda_detector(train->fs)};
  });
}

rf_status rf_gda_score(const rf_gda* gda, const rf_featureset* fs, double* scores, size_t n) {
  return guarded([&] {
    need(gda, "gda");
    need(fs, "featureset");
    need(scores, "scores");
    resflow::require(n >= fs->fs.size(), resflow::Errc::invalid_argument,
                     "score buffer smaller than the feature set");
    const auto s = resflow::gda_scores(gda->gda, fs->fs);
    std::memcpy(scores, s.data(), s.size() * sizeof(double));
  });
}

void rf_gda_free(rf_gda* gda) { delete gda; }

rf_status rf_evaluate(const double* in_scores, size_t n_in, const double* out_scores, size_t n_out,
                      rf_eval_report* report) {
  return guarded([&] {
    need(in_scores, "in_scores");
    need(out_scores, "out_scores");
    need(report, "report");
    const auto r = resflow::evaluate(std::span<const double>(in_scores, n_in),
                                     std::span<const double>(out_scores, n_out));
    report->tnr_at_tpr95 = r.tnr_at_tpr95;
    report->auroc = r.auroc;
    report->detection_accuracy = r.detection_accuracy;
    report->aupr_in = r.aupr_in;
    report->aupr_out = r.aupr_out;
  });
}

rf_status rf_roc_curve(const double* in_scores, size_t n_in, const double* out_scores, size_t n_out,
                       double* fpr, double* tpr, size_t cap, size_t* n_points) {
  return guarded([&] {
    need(in_scores, "in_scores");
    need(out_scores, "out_scores");
    need(n_points, "n_points");
    const auto curve = resflow::roc_curve(std::span<const double>(in_scores, n_in),
                                          std::span<const double>(out_scores, n_out));
    *n_points = curve.size();
    if (!fpr && !tpr) return;
    need(fpr, "fpr");
    need(tpr, "tpr");
    resflow::require(cap >= curve.size(), resflow::Errc::invalid_argument, "ROC buffer too small");
    for (std::size_t i = 0; i < curve.size(); ++i) {
      fpr[i] = curve[i].fpr;
      tpr[i] = curve[i].tpr;
    }
  });
}

}  // extern "C"
