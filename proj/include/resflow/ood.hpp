#pragma once

// Out-of-distribution detector built from per-layer, per-class residual flows.
//
// For each layer the class means are removed, one Gaussian (linear flow) is
// fitted on the pooled centered features, and each class trains its own
// coupling stack on top of that shared linear block. A sample's layer score
// is the best class log-likelihood of its class-centered feature; layer scores
// are combined with logistic-regression weights.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "resflow/data_io.hpp"
#include "resflow/gaussian.hpp"
#include "resflow/residual_flow.hpp"

namespace resflow {

enum class PerturbMode { off, feature_space, precomputed };

std::string_view to_string(PerturbMode mode);
PerturbMode parse_perturb_mode(std::string_view s);

struct FlowConfig {
  std::size_t n_blocks = kDefaultBlocks;
  std::size_t hidden = 0;  // 0: default_hidden_width
  double clamp = kDefaultScaleClamp;
  double rank_tol = kDefaultRankTol;
  TrainConfig train;
  double val_fraction = 0.2;  // used when the feature set carries no val split
  bool baseline_only = false;
  std::size_t parallel = 0;   // concurrent (layer, class) trainings; 0 = all cores
};

struct LayerModel {
  std::string layer_id;
  std::vector<Vector> class_means;
  std::shared_ptr<const GaussianModel> shared_gauss;
  std::vector<ResidualFlow> flows;       // one per class, all sharing shared_gauss
  std::vector<TrainHistory> histories;   // empty for loaded or baseline models

  std::size_t class_count() const { return class_means.size(); }
  std::size_t dim() const { return shared_gauss->dim(); }
};

struct Detector {
  std::vector<LayerModel> layers;
  Vector alpha;       // one weight per layer
  double bias = 0.0;
  double epsilon = 0.0;
  PerturbMode perturb_mode = PerturbMode::off;
  bool baseline_only = false;
};

struct FitHooks {
  // Called after every training evaluation, in (layer, class) order.
  std::function<void(std::size_t layer, std::size_t cls, const TrainRecord&)> on_record;
  // Called at epoch 0 and every checkpoint_every epochs with the current models.
  std::size_t checkpoint_every = 0;
  std::function<void(std::size_t epoch, const std::vector<LayerModel>&)> on_checkpoint;
};

std::vector<LayerModel> fit_layer_models(const FeatureSet& features, const FlowConfig& cfg,
                                         const FitHooks& hooks = {});

// Equal weights 1/L, zero bias, no perturbation.
Detector make_detector(std::vector<LayerModel> layers, bool baseline_only = false);

struct LayerScore {
  double score = 0.0;
  std::size_t cls = 0;
};

// max_c log p_c(phi - mu_c); ties go to the lowest class id.
LayerScore layer_score(const LayerModel& model, std::span<const double> phi);
// max_c -(phi - mu_c)^T Sigma^+ (phi - mu_c) with the shared covariance.
LayerScore layer_score_mahalanobis(const LayerModel& model, std::span<const double> phi);

// phi + eps * sign(grad log p_chat(phi - mu_chat)), chat from the unperturbed phi.
Vector perturb_feature(const LayerModel& model, std::span<const double> phi, double epsilon);

enum class ScoreMethod { resflow, mahalanobis };

// N x L matrix of layer scores. The resflow method applies the detector's
// perturbation mode; mahalanobis never perturbs.
Matrix score_layers(const Detector& det, const FeatureSet& features,
                    ScoreMethod method = ScoreMethod::resflow);

// alpha . S + bias for each row of an N x L layer-score matrix.
Vector combine_scores(const Detector& det, const Matrix& layer_scores);

// Score of one sample given its per-layer features (and perturbed features
// when the mode is precomputed).
double detector_score(const Detector& det, std::span<const Vector> phis,
                      std::span<const Vector> perturbed = {});

Vector detector_scores(const Detector& det, const FeatureSet& features);

struct LayerWeights {
  Vector alpha;
  double bias = 0.0;
};

// Ridge-regularized logistic regression (in = positive) on standardized layer
// scores, with the standardization folded back into alpha and bias.
LayerWeights fit_layer_weights(const Matrix& val_in, const Matrix& val_out);

struct TuneCandidate {
  double epsilon = 0.0;
  double auroc = 0.0;
  LayerWeights weights;
};

struct TuneResult {
  double epsilon = 0.0;
  double auroc = 0.0;
  bool weak = false;  // best validation AUROC below 0.6
  std::vector<TuneCandidate> candidates;
};

inline const std::vector<double>& default_epsilon_grid() {
  static const std::vector<double> grid{0.0, 0.0005, 0.001, 0.0014, 0.002};
  return grid;
}

// Picks epsilon maximizing validation AUROC (first wins ties), refitting the
// layer weights per candidate, and stores the winner in the detector.
TuneResult tune_detector(Detector& det, const FeatureSet& val_in, const FeatureSet& val_out,
                         std::span<const double> eps_grid);

// Gaussian discriminant baseline: one covariance per class and layer.
struct GdaDetector {
  std::vector<std::string> layer_ids;
  std::vector<GdaModel> layers;
};

// Fitted on the train-split rows.
GdaDetector fit_gda_detector(const FeatureSet& train, double rank_tol = kDefaultRankTol);
// Mean over layers of max_c gda_logprob.
Vector gda_scores(const GdaDetector& gda, const FeatureSet& features);

// Directory layout: manifest.txt, means_<l>.bin, flow_<l>_<c>.rflow.
void save_detector(const Detector& det, const std::filesystem::path& dir);
Detector load_detector(const std::filesystem::path& dir);

}  // namespace resflow
