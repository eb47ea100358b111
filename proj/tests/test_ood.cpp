#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>

#include "resflow/data_io.hpp"
#include "resflow/error.hpp"
#include "resflow/metrics.hpp"
#include "resflow/ood.hpp"

using namespace resflow;

namespace {

FeatureSet mixture(std::size_t n, std::size_t classes, std::size_t dim, std::uint64_t seed,
                   std::size_t layers = 1) {
  SynthSpec spec;
  spec.kind = "mixture";
  spec.n = n;
  spec.classes = classes;
  spec.dim = dim;
  spec.layers = layers;
  spec.seed = seed;
  return synthesize(spec);
}

FlowConfig quick_config(std::size_t epochs) {
  FlowConfig cfg;
  cfg.n_blocks = 2;
  cfg.hidden = 8;
  cfg.train.learning_rate = 1e-3;
  cfg.train.max_epochs = epochs;
  cfg.train.batch_size = 64;
  cfg.train.seed = 3;
  return cfg;
}

// One-layer, one-class detector around a fixed Gaussian with linear-only flows.
Detector fixed_detector(const Vector& mu, const Matrix& sigma) {
  LayerModel lm;
  lm.layer_id = "0";
  lm.class_means = {Vector(mu.size(), 0.0)};
  lm.shared_gauss = std::make_shared<const GaussianModel>(gaussian_from_moments(mu, sigma));
  lm.flows = {linear_only_flow(lm.shared_gauss)};
  std::vector<LayerModel> layers;
  layers.push_back(std::move(lm));
  return make_detector(std::move(layers));
}

FeatureSet one_layer(const Matrix& data) {
  FeatureSet fs;
  fs.class_count = 1;
  fs.layers.push_back({"0", data, std::nullopt});
  return fs;
}

}  // namespace

TEST_CASE("untrained single-class detector ranks like the Mahalanobis baseline") {
  SynthSpec spec;
  spec.kind = "gaussian";
  spec.dim = 3;
  spec.n = 300;
  spec.seed = 1;
  const FeatureSet train = synthesize(spec);
  const auto models = fit_layer_models(train, quick_config(0));
  const Detector det = make_detector(models);
  spec.seed = 2;
  const FeatureSet test = synthesize(spec);
  const Vector flow = combine_scores(det, score_layers(det, test));
  const Vector maha = combine_scores(det, score_layers(det, test, ScoreMethod::mahalanobis));
  for (std::size_t i = 0; i < flow.size(); ++i)
    for (std::size_t j = 0; j < flow.size(); ++j) CHECK((flow[i] < flow[j]) == (maha[i] < maha[j]));
}

TEST_CASE("layers and classes") {
  const FeatureSet fs = mixture(60, 2, 3, 4, 3);
  const auto models = fit_layer_models(fs, quick_config(2));
  REQUIRE(models.size() == 3);
  for (const auto& m : models) {
    CHECK(m.class_count() == 2);
    CHECK(m.flows.size() == 2);
    CHECK(m.histories.size() == 2);
    CHECK(m.flows[0].linear == m.flows[1].linear);
  }
}

TEST_CASE("classes with identical distributions train alike") {
  FeatureSet fs;
  fs.class_count = 2;
  const Matrix x = sample_standard_normal(1200, 2, 8);
  fs.layers.push_back({"0", x, std::nullopt});
  for (std::size_t i = 0; i < 1200; ++i) fs.labels.push_back(static_cast<std::uint32_t>(i % 2));
  const auto models = fit_layer_models(fs, quick_config(5));
  const double a = models[0].histories[0].best_val_ll();
  const double b = models[0].histories[1].best_val_ll();
  // Standard error of a mean log-likelihood over 120 samples is about 0.09.
  CHECK(std::fabs(a - b) < 0.3);
}

TEST_CASE("fit errors") {
  FeatureSet fs = mixture(20, 2, 2, 1);
  FeatureSet unlabeled = fs;
  unlabeled.labels.clear();
  try {
    fit_layer_models(unlabeled, quick_config(1));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()) == "labels required");
  }
  fs.class_count = 3;  // class 2 has no samples
  try {
    fit_layer_models(fs, quick_config(1));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("class 2") != std::string::npos);
  }
}

TEST_CASE("baseline-only and zero-epoch detectors score identically") {
  const FeatureSet fs = mixture(80, 3, 4, 6, 2);
  FlowConfig base = quick_config(0);
  base.baseline_only = true;
  const Detector a = make_detector(fit_layer_models(fs, quick_config(0)));
  const Detector b = make_detector(fit_layer_models(fs, base), true);
  CHECK(detector_scores(a, fs) == detector_scores(b, fs));
  CHECK(b.layers[0].flows[0].blocks.empty());
}

TEST_CASE("layer_score") {
  const FeatureSet fs = mixture(50, 3, 3, 7);
  const auto models = fit_layer_models(fs, quick_config(2));
  const LayerModel& lm = models[0];
  const Matrix probe = sample_standard_normal(30, 3, 8);
  for (std::size_t i = 0; i < probe.rows(); ++i) {
    double best = -INFINITY;
    std::size_t arg = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      Vector centered(probe.row(i).begin(), probe.row(i).end());
      for (std::size_t j = 0; j < 3; ++j) centered[j] -= lm.class_means[c][j];
      const double lp = resflow_logprob(lm.flows[c], centered);
      if (lp > best) {
        best = lp;
        arg = c;
      }
    }
    const LayerScore s = layer_score(lm, probe.row(i));
    CHECK(s.score == best);
    CHECK(s.cls == arg);
  }
  CHECK_THROWS_AS(layer_score(lm, Vector{1, 2}), Error);

  const Detector single = fixed_detector({0, 0}, Matrix::identity(2));
  CHECK(layer_score(single.layers[0], Vector{0.5, 1}).score ==
        gaussian_logprob(*single.layers[0].shared_gauss, Vector{0.5, 1}));

  // Two classes with identity covariance: a point at class 0's mean picks class 0.
  LayerModel two = single.layers[0];
  two.class_means = {Vector{1, 1}, Vector{-1, 2}};
  two.flows.push_back(two.flows[0]);
  CHECK(layer_score(two, Vector{1, 1}).cls == 0);
  CHECK(layer_score(two, Vector{-1, 2}).cls == 1);
}

TEST_CASE("perturb_feature") {
  const Detector det = fixed_detector({0, 0, 0}, Matrix::identity(3));
  const LayerModel& lm = det.layers[0];
  const Vector phi{0.3, -2.0, 1.0};
  CHECK(perturb_feature(lm, phi, 0.0) == phi);
  const Vector p = perturb_feature(lm, phi, 0.01);
  CHECK(p[0] == doctest::Approx(0.3 - 0.01));
  CHECK(p[1] == doctest::Approx(-2.0 + 0.01));
  CHECK(p[2] == doctest::Approx(1.0 - 0.01));
  CHECK_THROWS_AS(perturb_feature(lm, phi, -1.0), Error);
}

TEST_CASE("detector_score and weights") {
  const FeatureSet fs = mixture(40, 2, 3, 9, 3);
  Detector det = make_detector(fit_layer_models(fs, quick_config(1)));
  const Matrix s = score_layers(det, fs);
  std::vector<Vector> phis;
  for (const auto& l : fs.layers) phis.emplace_back(l.data.row(0).begin(), l.data.row(0).end());
  CHECK(detector_score(det, phis) == doctest::Approx((s(0, 0) + s(0, 1) + s(0, 2)) / 3.0).epsilon(1e-14));

  det.alpha = {0.3, -1.2, 2.5};
  det.bias = 0.7;
  const Vector combined = combine_scores(det, s);
  for (std::size_t i = 0; i < fs.size(); ++i) {
    const double ref = 0.7 + 0.3 * s(i, 0) - 1.2 * s(i, 1) + 2.5 * s(i, 2);
    CHECK(std::fabs(combined[i] - ref) <= 1e-12 * std::max(1.0, std::fabs(ref)));
  }
  phis.pop_back();
  CHECK_THROWS_AS(detector_score(det, phis), Error);

  Detector single = fixed_detector({0, 0}, Matrix::identity(2));
  single.alpha = {1.0};
  const std::vector<Vector> one{Vector{0.4, 0.1}};
  CHECK(detector_score(single, one) == layer_score(single.layers[0], one[0]).score);
}

TEST_CASE("score_layers errors") {
  const FeatureSet fs = mixture(20, 2, 3, 1);
  const Detector det = make_detector(fit_layer_models(fs, quick_config(0)));
  FeatureSet wrong = one_layer(Matrix(2, 4));
  CHECK_THROWS_AS(score_layers(det, wrong), Error);
  wrong.layers[0].id = "other";
  CHECK_THROWS_AS(score_layers(det, wrong), Error);
  Detector pre = det;
  pre.perturb_mode = PerturbMode::precomputed;
  CHECK_THROWS_AS(score_layers(pre, fs), Error);
}

TEST_CASE("fit_layer_weights") {
  SUBCASE("separated single layer") {
    const Matrix in(3, 1, {5, 6, 7}), out(3, 1, {1, 2, 3});
    const LayerWeights w = fit_layer_weights(in, out);
    CHECK(w.alpha[0] > 0.0);
    Vector si, so;
    for (double v : in.data()) si.push_back(w.alpha[0] * v + w.bias);
    for (double v : out.data()) so.push_back(w.alpha[0] * v + w.bias);
    CHECK(auroc(si, so) == 1.0);

    const LayerWeights flipped = fit_layer_weights(out, in);
    CHECK(flipped.alpha[0] == doctest::Approx(-w.alpha[0]).epsilon(1e-8));
  }
  SUBCASE("noise layer gets the smaller weight") {
    const Matrix a = sample_standard_normal(400, 2, 5), b = sample_standard_normal(400, 2, 6);
    Matrix in(400, 2), out(400, 2);
    for (std::size_t i = 0; i < 400; ++i) {
      in(i, 0) = a(i, 0) + 2.0;
      out(i, 0) = b(i, 0);
      in(i, 1) = a(i, 1);
      out(i, 1) = b(i, 1);
    }
    const LayerWeights w = fit_layer_weights(in, out);
    CHECK(std::fabs(w.alpha[1]) < std::fabs(w.alpha[0]));
  }
  SUBCASE("degenerate input") {
    CHECK_THROWS_AS(fit_layer_weights(Matrix(2, 1, {1, 1}), Matrix(2, 1, {1, 1})), Error);
    CHECK_THROWS_AS(fit_layer_weights(Matrix(0, 1), Matrix(2, 1, {1, 2})), Error);
    CHECK_THROWS_AS(fit_layer_weights(Matrix(2, 1, {1, 2}), Matrix(2, 2)), Error);
  }
}

TEST_CASE("epsilon tuning") {
  // Sigma = diag(1, 64). In points (1 + d, 0) and out points (0, 8 (1 + d)) have
  // the same unperturbed scores; the sign step moves an in point by a full epsilon
  // toward the mean but an out point only by epsilon / 8 in whitened units.
  const Detector base = fixed_detector({0, 0}, Matrix(2, 2, {1, 0, 0, 64}));
  Matrix in(50, 2), out(50, 2);
  for (std::size_t i = 0; i < 50; ++i) {
    const double d = 1e-5 * static_cast<double>(i);
    in(i, 0) = 1 + d;
    out(i, 1) = 8 * (1 + d);
  }
  const FeatureSet vin = one_layer(in), vout = one_layer(out);

  SUBCASE("grid {0}") {
    Detector det = base;
    const TuneResult r = tune_detector(det, vin, vout, std::vector<double>{0.0});
    CHECK(r.epsilon == 0.0);
    CHECK(det.perturb_mode == PerturbMode::off);
    CHECK(r.auroc == 0.5);
    CHECK(r.weak);
    CHECK(det.alpha == r.candidates[0].weights.alpha);
  }
  SUBCASE("default grid picks 0.001") {
    Detector det = base;
    const TuneResult r = tune_detector(det, vin, vout, default_epsilon_grid());
    REQUIRE(r.candidates.size() == 5);
    CHECK(r.candidates[0].auroc == 0.5);
    CHECK(r.candidates[1].auroc < 1.0);
    CHECK(r.candidates[2].auroc == 1.0);
    CHECK(r.epsilon == 0.001);
    CHECK(det.epsilon == 0.001);
    CHECK(det.perturb_mode == PerturbMode::feature_space);
    CHECK_FALSE(r.weak);
    CHECK(auroc(detector_scores(det, vin), detector_scores(det, vout)) == 1.0);
  }
  SUBCASE("errors") {
    Detector det = base;
    CHECK_THROWS_AS(tune_detector(det, one_layer(Matrix(0, 2)), vout, default_epsilon_grid()), Error);
    CHECK_THROWS_AS(tune_detector(det, vin, vout, std::vector<double>{}), Error);
    CHECK_THROWS_AS(tune_detector(det, vin, vout, std::vector<double>{-1.0}), Error);
  }
}

TEST_CASE("identical validation sets are flagged") {
  const FeatureSet fs = mixture(100, 2, 3, 10);
  Detector det = make_detector(fit_layer_models(fs, quick_config(0)));
  const TuneResult r = tune_detector(det, fs, fs, std::vector<double>{0.0, 0.001});
  CHECK(std::fabs(r.auroc - 0.5) < 0.05);
  CHECK(r.weak);
}

TEST_CASE("detector save and load") {
  const FeatureSet fs = mixture(40, 2, 3, 12, 2);
  Detector det = make_detector(fit_layer_models(fs, quick_config(2)));
  det.alpha = {0.25, 1.5};
  det.bias = -0.125;
  det.epsilon = 0.001;
  det.perturb_mode = PerturbMode::feature_space;
  const auto dir = std::filesystem::temp_directory_path() / "resflow_test_detector";
  std::filesystem::remove_all(dir);
  save_detector(det, dir);
  const Detector back = load_detector(dir);
  CHECK(back.alpha == det.alpha);
  CHECK(back.bias == det.bias);
  CHECK(back.epsilon == det.epsilon);
  CHECK(back.perturb_mode == det.perturb_mode);
  CHECK(back.layers[0].flows[0].linear == back.layers[0].flows[1].linear);
  CHECK(detector_scores(back, fs) == detector_scores(det, fs));

  std::filesystem::remove(dir / "flow_1_0.rflow");
  CHECK_THROWS_AS(load_detector(dir), Error);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_detector(dir), Error);
}

TEST_CASE("per-class covariances overfit tiny classes") {
  // Tied identity covariance, 10 samples per class in 8 dimensions.
  const auto means = axis_class_means(4, 8, 3.0);
  FeatureSet train = gen_class_mixture(10, means, CovKind::tied, 21);
  const FeatureSet test_in = gen_class_mixture(250, means, CovKind::tied, 22);
  SynthSpec spec;
  spec.kind = "gaussian";
  spec.dim = 8;
  spec.n = 1000;
  spec.seed = 23;
  FeatureSet test_out = synthesize(spec);
  for (double& v : test_out.layers[0].data.data()) v *= 2.0;

  FlowConfig cfg = quick_config(0);
  cfg.baseline_only = true;
  const Detector lda = make_detector(fit_layer_models(train, cfg), true);
  const GdaDetector gda = fit_gda_detector(train);
  const double lda_auc = auroc(detector_scores(lda, test_in), detector_scores(lda, test_out));
  const double gda_auc = auroc(gda_scores(gda, test_in), gda_scores(gda, test_out));
  CHECK(gda_auc <= lda_auc);
}
