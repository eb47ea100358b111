#include <algorithm>
#include <cmath>

#include "resflow/data_io.hpp"
#include "resflow/error.hpp"

namespace resflow {

Matrix gen_banana(std::size_t n, std::uint64_t seed) { return gen_shifted_banana(n, 0.0, false, seed); }

Matrix gen_shifted_banana(std::size_t n, double offset, bool flip, std::uint64_t seed) {
  require(n >= 1, Errc::invalid_argument, "generator needs n >= 1");
  Rng rng(seed);
  Matrix x(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double z1 = 2.0 * rng.normal();
    const double z2 = rng.normal();
    const double x2 = z2 + 0.25 * z1 * z1 - 1.0;
    x(i, 0) = z1;
    x(i, 1) = (flip ? -x2 : x2) + offset;
  }
  return x;
}

Matrix gen_ring(std::size_t n, double radius, double noise, std::uint64_t seed) {
  require(n >= 1, Errc::invalid_argument, "generator needs n >= 1");
  require(radius > 0.0 && noise >= 0.0, Errc::invalid_argument, "ring needs radius > 0, noise >= 0");
  Rng rng(seed);
  Matrix x(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double r = radius + noise * rng.normal();
    x(i, 0) = r * std::cos(angle);
    x(i, 1) = r * std::sin(angle);
  }
  return x;
}

Matrix gen_gaussian(std::size_t n, std::size_t dim, std::uint64_t seed) {
  require(n >= 1 && dim >= 1, Errc::invalid_argument, "generator needs n >= 1 and dim >= 1");
  return sample_standard_normal(n, dim, seed);
}

std::vector<Vector> axis_class_means(std::size_t classes, std::size_t dim, double sep) {
  require(classes >= 1 && dim >= 1, Errc::invalid_argument, "need >= 1 class and dim >= 1");
  std::vector<Vector> means(classes, Vector(dim, 0.0));
  for (std::size_t c = 0; c < classes; ++c) means[c][(c / 2) % dim] = (c % 2 == 0 ? sep : -sep);
  return means;
}

FeatureSet gen_class_mixture(std::size_t n_per_class, const std::vector<Vector>& class_means,
                             CovKind cov, std::uint64_t seed) {
  require(!class_means.empty(), Errc::invalid_argument, "mixture needs at least one class");
  require(n_per_class >= 1, Errc::invalid_argument, "mixture needs n >= 1 per class");
  const std::size_t dim = class_means.front().size();
  require(dim >= 1, Errc::invalid_argument, "class means must be nonempty");
  for (const auto& m : class_means)
    require(m.size() == dim, Errc::dim_mismatch, "class means differ in dimension");

  const std::size_t classes = class_means.size();
  Rng rng(seed);
  std::vector<Vector> scales(classes, Vector(dim, 1.0));
  if (cov == CovKind::per_class)
    for (auto& s : scales)
      for (double& v : s) v = std::sqrt(rng.uniform(0.25, 4.0));

  FeatureSet fs;
  fs.dataset = "mixture";
  fs.class_count = classes;
  FeatureLayer layer;
  layer.id = "0";
  layer.data = Matrix(n_per_class * classes, dim);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      auto row = layer.data.row(c * n_per_class + i);
      for (std::size_t j = 0; j < dim; ++j) row[j] = class_means[c][j] + scales[c][j] * rng.normal();
      fs.labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  fs.layers.push_back(std::move(layer));
  fs.extra["covariance"] = cov == CovKind::tied ? "tied" : "per_class";
  return fs;
}

const std::vector<std::string>& synth_kinds() {
  static const std::vector<std::string> kinds{"gaussian", "banana", "ring", "mixture", "shifted-ood"};
  return kinds;
}

void add_derived_layers(FeatureSet& fs, std::size_t count, std::uint64_t layer_seed,
                        std::uint64_t noise_seed) {
  require(!fs.layers.empty(), Errc::invalid_argument, "no base layer");
  const Matrix base = fs.layers.front().data;  // copy: push_back below reallocates
  const std::size_t d = base.cols();
  Rng noise(mix_seed(noise_seed, 0xd1e));
  for (std::size_t l = fs.layers.size(); l < count; ++l) {
    Rng maps(mix_seed(layer_seed, l));
    Matrix r(d, d);
    for (double& v : r.data()) v = maps.normal() / std::sqrt(static_cast<double>(d));
    Matrix out = matmul(base, r);
    for (double& v : out.data()) v += 0.05 * noise.normal();
    fs.layers.push_back(FeatureLayer{std::to_string(l), std::move(out), std::nullopt});
  }
}

FeatureSet synthesize(const SynthSpec& spec) {
  const auto& kinds = synth_kinds();
  if (std::find(kinds.begin(), kinds.end(), spec.kind) == kinds.end()) {
    std::string list;
    for (const auto& k : kinds) list += (list.empty() ? "" : ", ") + k;
    fail(Errc::invalid_argument, "unknown kind '" + spec.kind + "' (valid kinds: " + list + ")");
  }
  require(spec.n >= 1, Errc::invalid_argument, "n must be >= 1");
  require(spec.layers >= 1, Errc::invalid_argument, "layers must be >= 1");

  FeatureSet fs;
  if (spec.kind == "mixture") {
    fs = gen_class_mixture(spec.n, axis_class_means(spec.classes, spec.dim, spec.sep), spec.cov,
                           spec.seed);
  } else {
    Matrix x;
    if (spec.kind == "gaussian") x = gen_gaussian(spec.n, spec.dim, spec.seed);
    if (spec.kind == "banana") x = gen_banana(spec.n, spec.seed);
    if (spec.kind == "ring") x = gen_ring(spec.n, spec.radius, spec.noise, spec.seed);
    if (spec.kind == "shifted-ood") x = gen_shifted_banana(spec.n, 0.0, spec.flip, spec.seed);
    fs.class_count = 1;
    fs.labels.assign(spec.n, 0);
    fs.layers.push_back(FeatureLayer{"0", std::move(x), std::nullopt});
  }
  if (spec.offset != 0.0) {
    Matrix& x = fs.layers.front().data;
    for (std::size_t i = 0; i < x.rows(); ++i) x(i, x.cols() - 1) += spec.offset;
  }
  fs.dataset = spec.kind;
  fs.extra["seed"] = std::to_string(spec.seed);
  add_derived_layers(fs, spec.layers, spec.layer_seed, spec.seed);
  return fs;
}

}  // namespace resflow
