#include "resflow/ood.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "parallel.hpp"
#include "resflow/error.hpp"
#include "resflow/metrics.hpp"

namespace resflow {

std::string_view to_string(PerturbMode mode) {
  switch (mode) {
    case PerturbMode::off: return "off";
    case PerturbMode::feature_space: return "feature_space";
    case PerturbMode::precomputed: return "precomputed";
  }
  return "off";
}

PerturbMode parse_perturb_mode(std::string_view s) {
  if (s == "off") return PerturbMode::off;
  if (s == "feature_space") return PerturbMode::feature_space;
  if (s == "precomputed") return PerturbMode::precomputed;
  fail(Errc::invalid_argument, "unknown perturb mode '" + std::string(s) + "'");
}

namespace {

Vector centered(std::span<const double> phi, const Vector& mean) {
  Vector v(phi.begin(), phi.end());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= mean[i];
  return v;
}

struct TrainSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

TrainSplit resolve_split(const FeatureSet& fs, const FlowConfig& cfg) {
  TrainSplit s{indices_with_split(fs, Split::train), indices_with_split(fs, Split::val)};
  if (!s.val.empty()) return s;
  require(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0, Errc::invalid_argument,
          "validation fraction must lie in (0, 1)");
  // No validation tags: carve one out of the training rows.
  const FeatureSet train_only = subset(fs, s.train);
  const FeatureSet tagged = split(train_only, {1.0 - cfg.val_fraction, cfg.val_fraction, 0.0},
                                  mix_seed(cfg.train.seed, 0x5a17));
  TrainSplit out;
  for (std::size_t i = 0; i < s.train.size(); ++i)
    (tagged.splits[i] == Split::val ? out.val : out.train).push_back(s.train[i]);
  return out;
}

}  // namespace

std::vector<LayerModel> fit_layer_models(const FeatureSet& features, const FlowConfig& cfg,
                                         const FitHooks& hooks) {
  validate(features);
  require(features.has_labels(), Errc::invalid_argument, "labels required");
  require(features.class_count >= 1, Errc::invalid_argument, "feature set declares no classes");
  if (!cfg.baseline_only) {
    validate(cfg.train);
    require(cfg.n_blocks >= 1, Errc::invalid_argument, "n_blocks must be >= 1");
  }
  const TrainSplit split_idx = resolve_split(features, cfg);
  const std::size_t classes = features.class_count;

  std::vector<std::vector<std::size_t>> train_by_class(classes), val_by_class(classes);
  for (std::size_t i : split_idx.train) train_by_class[features.labels[i]].push_back(i);
  for (std::size_t i : split_idx.val) val_by_class[features.labels[i]].push_back(i);

  std::vector<LayerModel> models;
  struct Job {
    std::size_t layer, cls;
    Matrix train, val;
  };
  std::vector<Job> jobs;

  for (std::size_t l = 0; l < features.layers.size(); ++l) {
    const FeatureLayer& layer = features.layers[l];
    LayerModel lm;
    lm.layer_id = layer.id;
    std::vector<Matrix> centered_train(classes);
    std::size_t pooled_rows = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      require(train_by_class[c].size() >= 2, Errc::invalid_argument,
              "layer '" + layer.id + "' class " + std::to_string(c) + " has " +
                  std::to_string(train_by_class[c].size()) + " training samples; need at least 2");
      Matrix xc = gather_rows(layer.data, train_by_class[c]);
      lm.class_means.push_back(empirical_mean(xc));
      for (std::size_t i = 0; i < xc.rows(); ++i)
        for (std::size_t j = 0; j < xc.cols(); ++j) xc(i, j) -= lm.class_means[c][j];
      pooled_rows += xc.rows();
      centered_train[c] = std::move(xc);
    }
    Matrix pooled(pooled_rows, layer.data.cols());
    std::size_t r = 0;
    for (const auto& xc : centered_train)
      for (std::size_t i = 0; i < xc.rows(); ++i, ++r)
        std::copy(xc.row(i).begin(), xc.row(i).end(), pooled.row(r).begin());
    try {
      lm.shared_gauss = std::make_shared<const GaussianModel>(fit_gaussian(pooled, cfg.rank_tol));
    } catch (const Error& e) {
      throw Error(e.code(), "layer '" + layer.id + "': " + e.what());
    }

    for (std::size_t c = 0; c < classes; ++c) {
      if (cfg.baseline_only) {
        lm.flows.push_back(linear_only_flow(lm.shared_gauss));
        continue;
      }
      require(!val_by_class[c].empty(), Errc::invalid_argument,
              "layer '" + layer.id + "' class " + std::to_string(c) + " has no validation samples");
      const std::uint64_t pair_seed = mix_seed(cfg.train.seed, l * classes + c);
      lm.flows.push_back(
          build_residual_flow(lm.shared_gauss, cfg.n_blocks, pair_seed, cfg.hidden, cfg.clamp));
      Matrix xv = gather_rows(layer.data, val_by_class[c]);
      for (std::size_t i = 0; i < xv.rows(); ++i)
        for (std::size_t j = 0; j < xv.cols(); ++j) xv(i, j) -= lm.class_means[c][j];
      jobs.push_back(Job{l, c, std::move(centered_train[c]), std::move(xv)});
    }
    models.push_back(std::move(lm));
  }

  // Trainers hold pointers into `models`; it must not reallocate from here on.
  std::vector<FlowTrainer> trainers;
  trainers.reserve(jobs.size());
  for (auto& job : jobs) {
    TrainConfig tc = cfg.train;
    tc.seed = mix_seed(cfg.train.seed, 0x10000 + job.layer * classes + job.cls);
    trainers.emplace_back(models[job.layer].flows[job.cls], job.train, job.val, tc);
    job.train = Matrix();
    job.val = Matrix();
  }

  auto report_records = [&](const std::vector<char>& recorded) {
    if (!hooks.on_record) return;
    for (std::size_t t = 0; t < trainers.size(); ++t)
      if (recorded[t])
        hooks.on_record(jobs[t].layer, jobs[t].cls, trainers[t].history().records.back());
  };
  report_records(std::vector<char>(trainers.size(), 1));
  if (hooks.on_checkpoint) hooks.on_checkpoint(0, models);

  std::size_t epoch = 0;
  auto any_active = [&] {
    return std::any_of(trainers.begin(), trainers.end(), [](const auto& t) { return !t.done(); });
  };
  while (any_active()) {
    ++epoch;
    std::vector<char> recorded(trainers.size(), 0);
    detail::parallel_for(trainers.size(), cfg.parallel, [&](std::size_t t) {
      if (!trainers[t].done()) {
        recorded[t] = trainers[t].step_epoch() ? 1 : 0;
        // Stopped trainers hold their best checkpoint from now on.
        if (trainers[t].done()) trainers[t].finish();
      }
    });
    report_records(recorded);
    if (hooks.on_checkpoint && hooks.checkpoint_every > 0 && epoch % hooks.checkpoint_every == 0)
      hooks.on_checkpoint(epoch, models);
  }
  for (std::size_t t = 0; t < trainers.size(); ++t) {
    trainers[t].finish();
    models[jobs[t].layer].histories.resize(classes);
    models[jobs[t].layer].histories[jobs[t].cls] = trainers[t].history();
  }
  return models;
}

Detector make_detector(std::vector<LayerModel> layers, bool baseline_only) {
  require(!layers.empty(), Errc::invalid_argument, "detector needs at least one layer");
  Detector det;
  det.alpha.assign(layers.size(), 1.0 / static_cast<double>(layers.size()));
  det.layers = std::move(layers);
  det.baseline_only = baseline_only;
  return det;
}

LayerScore layer_score(const LayerModel& model, std::span<const double> phi) {
  require(phi.size() == model.dim(), Errc::dim_mismatch,
          "layer '" + model.layer_id + "' expects dimension " + std::to_string(model.dim()) +
              ", got " + std::to_string(phi.size()));
  LayerScore best;
  for (std::size_t c = 0; c < model.class_count(); ++c) {
    const double lp = resflow_logprob(model.flows[c], centered(phi, model.class_means[c]));
    if (c == 0 || lp > best.score) best = {lp, c};
  }
  return best;
}

LayerScore layer_score_mahalanobis(const LayerModel& model, std::span<const double> phi) {
  require(phi.size() == model.dim(), Errc::dim_mismatch,
          "layer '" + model.layer_id + "' expects dimension " + std::to_string(model.dim()) +
              ", got " + std::to_string(phi.size()));
  LayerScore best;
  for (std::size_t c = 0; c < model.class_count(); ++c) {
    const double s = mahalanobis_score(*model.shared_gauss, centered(phi, model.class_means[c]));
    if (c == 0 || s > best.score) best = {s, c};
  }
  return best;
}

Vector perturb_feature(const LayerModel& model, std::span<const double> phi, double epsilon) {
  require(epsilon >= 0.0, Errc::invalid_argument, "epsilon must be non-negative");
  Vector out(phi.begin(), phi.end());
  if (epsilon == 0.0) return out;
  const std::size_t chat = layer_score(model, phi).cls;
  Vector grad;
  resflow_logprob_grad(model.flows[chat], centered(phi, model.class_means[chat]), grad);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
    out[i] += epsilon * s;
  }
  return out;
}

namespace {

double score_one_layer(const Detector& det, const LayerModel& lm, std::span<const double> phi,
                       const Vector* perturbed) {
  switch (det.perturb_mode) {
    case PerturbMode::off:
      return layer_score(lm, phi).score;
    case PerturbMode::feature_space:
      return layer_score(lm, perturb_feature(lm, phi, det.epsilon)).score;
    case PerturbMode::precomputed:
      require(perturbed != nullptr, Errc::invalid_argument,
              "perturb mode 'precomputed' needs perturbed features for layer '" + lm.layer_id + "'");
      return layer_score(lm, *perturbed).score;
  }
  return 0.0;
}

void check_detector(const Detector& det) {
  require(!det.layers.empty(), Errc::state, "detector has no layers");
  require(det.alpha.size() == det.layers.size(), Errc::state,
          "detector has " + std::to_string(det.alpha.size()) + " weights for " +
              std::to_string(det.layers.size()) + " layers");
  require(det.epsilon >= 0.0, Errc::state, "detector epsilon is negative");
}

}  // namespace

Matrix score_layers(const Detector& det, const FeatureSet& features, ScoreMethod method) {
  check_detector(det);
  validate(features);
  const std::size_t n = features.size();
  const std::size_t n_layers = det.layers.size();
  std::vector<const FeatureLayer*> cols;
  for (const auto& lm : det.layers) {
    const FeatureLayer* fl = nullptr;
    for (const auto& l : features.layers)
      if (l.id == lm.layer_id) fl = &l;
    require(fl != nullptr, Errc::invalid_argument,
            "missing layer feature '" + lm.layer_id + "' in feature set");
    require(fl->data.cols() == lm.dim(), Errc::dim_mismatch,
            "layer '" + lm.layer_id + "' has dimension " + std::to_string(fl->data.cols()) +
                " in the feature set but " + std::to_string(lm.dim()) + " in the detector");
    if (method == ScoreMethod::resflow && det.perturb_mode == PerturbMode::precomputed)
      require(fl->perturbed.has_value(), Errc::invalid_argument,
              "perturb mode 'precomputed' needs perturbed tensors for layer '" + lm.layer_id + "'");
    cols.push_back(fl);
  }

  Matrix out(n, n_layers);
  constexpr std::size_t kChunk = 64;
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  detail::parallel_for(chunks, 0, [&](std::size_t chunk) {
    const std::size_t stop = std::min(n, (chunk + 1) * kChunk);
    for (std::size_t i = chunk * kChunk; i < stop; ++i) {
      for (std::size_t l = 0; l < n_layers; ++l) {
        const auto phi = cols[l]->data.row(i);
        if (method == ScoreMethod::mahalanobis) {
          out(i, l) = layer_score_mahalanobis(det.layers[l], phi).score;
        } else if (det.perturb_mode == PerturbMode::precomputed) {
          const auto p = cols[l]->perturbed->row(i);
          out(i, l) = layer_score(det.layers[l], p).score;
        } else {
          out(i, l) = score_one_layer(det, det.layers[l], phi, nullptr);
        }
      }
    }
  });
  return out;
}

Vector combine_scores(const Detector& det, const Matrix& layer_scores) {
  require(layer_scores.cols() == det.alpha.size(), Errc::dim_mismatch,
          "layer score matrix width does not match detector weights");
  Vector out(layer_scores.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dot(det.alpha, layer_scores.row(i)) + det.bias;
  return out;
}

double detector_score(const Detector& det, std::span<const Vector> phis,
                      std::span<const Vector> perturbed) {
  check_detector(det);
  require(phis.size() == det.layers.size(), Errc::invalid_argument,
          "missing layer feature: got " + std::to_string(phis.size()) + " layers, detector has " +
              std::to_string(det.layers.size()));
  double s = det.bias;
  for (std::size_t l = 0; l < det.layers.size(); ++l) {
    const Vector* p = l < perturbed.size() ? &perturbed[l] : nullptr;
    s += det.alpha[l] * score_one_layer(det, det.layers[l], phis[l], p);
  }
  return s;
}

Vector detector_scores(const Detector& det, const FeatureSet& features) {
  return combine_scores(det, score_layers(det, features));
}

namespace {

// Solves A x = b for a small dense system (partial pivoting).
Vector solve_small(Matrix a, Vector b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    require(a(piv, col) != 0.0, Errc::numeric, "singular system in logistic regression");
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(piv, c));
      std::swap(b[col], b[piv]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      b[r] -= f * b[col];
    }
  }
  Vector x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a(i, c) * x[c];
    x[i] = s / a(i, i);
  }
  return x;
}

double log1p_exp(double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

}  // namespace

LayerWeights fit_layer_weights(const Matrix& val_in, const Matrix& val_out) {
  require(val_in.rows() > 0 && val_out.rows() > 0, Errc::invalid_argument,
          "layer weighting needs nonempty in and out score sets");
  require(val_in.cols() == val_out.cols() && val_in.cols() > 0, Errc::dim_mismatch,
          "in and out score matrices differ in width");
  const std::size_t n_layers = val_in.cols();
  const std::size_t n = val_in.rows() + val_out.rows();

  Matrix x(n, n_layers);
  Vector y(n);
  for (std::size_t i = 0; i < val_in.rows(); ++i) {
    std::copy(val_in.row(i).begin(), val_in.row(i).end(), x.row(i).begin());
    y[i] = 1.0;
  }
  for (std::size_t i = 0; i < val_out.rows(); ++i)
    std::copy(val_out.row(i).begin(), val_out.row(i).end(), x.row(val_in.rows() + i).begin());
  for (double v : x.data()) require(std::isfinite(v), Errc::numeric, "non-finite layer score");

  const Vector mean = empirical_mean(x);
  Vector sd(n_layers, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < n_layers; ++l) sd[l] += (x(i, l) - mean[l]) * (x(i, l) - mean[l]);
  for (std::size_t l = 0; l < n_layers; ++l) {
    sd[l] = std::sqrt(sd[l] / static_cast<double>(n));
    require(sd[l] > 1e-12 * std::max(1.0, std::abs(mean[l])), Errc::numeric,
            "degenerate layer scores: layer " + std::to_string(l) + " is constant");
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < n_layers; ++l) x(i, l) = (x(i, l) - mean[l]) / sd[l];

  // theta = (w_0 .. w_{L-1}, b); objective = mean NLL + 0.5 * ridge * |w|^2
  constexpr double kRidge = 1e-3;
  const std::size_t p = n_layers + 1;
  Vector theta(p, 0.0);
  auto objective = [&](const Vector& th) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double m = dot(std::span<const double>(th).first(n_layers), x.row(i)) + th[n_layers];
      s += y[i] > 0.5 ? log1p_exp(-m) : log1p_exp(m);
    }
    double reg = 0.0;
    for (std::size_t l = 0; l < n_layers; ++l) reg += th[l] * th[l];
    return s / static_cast<double>(n) + 0.5 * kRidge * reg;
  };

  double f = objective(theta);
  for (int iter = 0; iter < 100; ++iter) {
    Vector g(p, 0.0);
    Matrix h(p, p);
    for (std::size_t i = 0; i < n; ++i) {
      const auto xi = x.row(i);
      const double m = dot(std::span<const double>(theta).first(n_layers), xi) + theta[n_layers];
      const double prob = 1.0 / (1.0 + std::exp(-m));
      const double r = prob - y[i];
      const double w = prob * (1.0 - prob);
      for (std::size_t a = 0; a < p; ++a) {
        const double xa = a < n_layers ? xi[a] : 1.0;
        g[a] += r * xa;
        for (std::size_t b = 0; b < p; ++b) h(a, b) += w * xa * (b < n_layers ? xi[b] : 1.0);
      }
    }
    for (std::size_t a = 0; a < p; ++a) {
      g[a] /= static_cast<double>(n);
      for (std::size_t b = 0; b < p; ++b) h(a, b) /= static_cast<double>(n);
    }
    for (std::size_t l = 0; l < n_layers; ++l) {
      g[l] += kRidge * theta[l];
      h(l, l) += kRidge;
    }
    h(n_layers, n_layers) += 1e-12;
    const Vector step = solve_small(h, g);

    double t = 1.0;
    Vector next(p);
    double f_next = f;
    for (int ls = 0; ls < 50; ++ls) {
      for (std::size_t a = 0; a < p; ++a) next[a] = theta[a] - t * step[a];
      f_next = objective(next);
      if (f_next <= f) break;
      t *= 0.5;
    }
    if (f_next > f) break;
    double max_step = 0.0;
    for (std::size_t a = 0; a < p; ++a) max_step = std::max(max_step, std::abs(t * step[a]));
    theta = next;
    f = f_next;
    if (max_step < 1e-10) break;
  }

  LayerWeights out;
  out.alpha.resize(n_layers);
  out.bias = theta[n_layers];
  for (std::size_t l = 0; l < n_layers; ++l) {
    out.alpha[l] = theta[l] / sd[l];
    out.bias -= theta[l] * mean[l] / sd[l];
  }
  return out;
}

TuneResult tune_detector(Detector& det, const FeatureSet& val_in, const FeatureSet& val_out,
                         std::span<const double> eps_grid) {
  check_detector(det);
  require(val_in.size() > 0 && val_out.size() > 0, Errc::invalid_argument,
          "empty validation feature sets");
  std::vector<double> grid(eps_grid.begin(), eps_grid.end());
  if (det.perturb_mode == PerturbMode::precomputed) grid = {det.epsilon};
  require(!grid.empty(), Errc::invalid_argument, "empty epsilon grid");

  TuneResult result;
  Detector trial = det;
  for (double eps : grid) {
    require(eps >= 0.0 && std::isfinite(eps), Errc::invalid_argument, "epsilon must be >= 0");
    trial.epsilon = eps;
    if (det.perturb_mode != PerturbMode::precomputed)
      trial.perturb_mode = eps > 0.0 ? PerturbMode::feature_space : PerturbMode::off;
    const Matrix s_in = score_layers(trial, val_in);
    const Matrix s_out = score_layers(trial, val_out);
    TuneCandidate cand;
    cand.epsilon = eps;
    cand.weights = fit_layer_weights(s_in, s_out);
    trial.alpha = cand.weights.alpha;
    trial.bias = cand.weights.bias;
    cand.auroc = auroc(combine_scores(trial, s_in), combine_scores(trial, s_out));
    result.candidates.push_back(cand);
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < result.candidates.size(); ++i)
    if (result.candidates[i].auroc > result.candidates[best].auroc) best = i;
  const TuneCandidate& win = result.candidates[best];
  result.epsilon = win.epsilon;
  result.auroc = win.auroc;
  result.weak = win.auroc < 0.6;

  det.epsilon = win.epsilon;
  if (det.perturb_mode != PerturbMode::precomputed)
    det.perturb_mode = win.epsilon > 0.0 ? PerturbMode::feature_space : PerturbMode::off;
  det.alpha = win.weights.alpha;
  det.bias = win.weights.bias;
  return result;
}


GdaDetector fit_gda_detector(const FeatureSet& train, double rank_tol) {
  validate(train);
  require(train.has_labels(), Errc::invalid_argument, "labels required");
  const auto rows = indices_with_split(train, Split::train);
  std::vector<std::vector<std::size_t>> by_class(train.class_count);
  for (std::size_t i : rows) by_class[train.labels[i]].push_back(i);
  GdaDetector gda;
  for (const auto& layer : train.layers) {
    std::vector<Matrix> per_class;
    for (const auto& idx : by_class) per_class.push_back(gather_rows(layer.data, idx));
    gda.layer_ids.push_back(layer.id);
    gda.layers.push_back(fit_gda(per_class, rank_tol));
  }
  return gda;
}

Vector gda_scores(const GdaDetector& gda, const FeatureSet& features) {
  validate(features);
  Vector out(features.size(), 0.0);
  const double w = 1.0 / static_cast<double>(gda.layers.size());
  for (std::size_t l = 0; l < gda.layers.size(); ++l) {
    const FeatureLayer& fl = features.layer(gda.layer_ids[l]);
    require(fl.data.cols() == gda.layers[l].classes.front().dim(), Errc::dim_mismatch,
            "layer '" + fl.id + "' dimension differs from the GDA model");
    for (std::size_t i = 0; i < out.size(); ++i) {
      double best = 0.0;
      for (std::size_t c = 0; c < gda.layers[l].classes.size(); ++c) {
        const double lp = gda_logprob(gda.layers[l], fl.data.row(i), c);
        if (c == 0 || lp > best) best = lp;
      }
      out[i] += w * best;
    }
  }
  return out;
}

}  // namespace resflow
