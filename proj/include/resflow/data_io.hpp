#pragma once

// Per-layer feature tensors with labels and split tags, the RFFS1 file
// format, stratified splitting, and synthetic generators.
//
// RFFS1 layout (little-endian):
//   magic "RFFS1" (5 bytes), version u16 (= 1),
//   manifest: u32 byte length + UTF-8 "key=value\n" lines,
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u64 N, u64 d, N*d f32 row-major.
// Tensor names: "layer:<id>", "perturbed:<id>", "labels" (N x 1, class ids),
// "split" (N x 1; 0 train, 1 val, 2 test).

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "resflow/linalg.hpp"

namespace resflow {

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

struct FeatureLayer {
  std::string id;
  Matrix data;                       // N x d_l
  std::optional<Matrix> perturbed;   // N x d_l, input-preprocessed activations
};

struct FeatureSet {
  std::string dataset;
  std::size_t class_count = 0;
  std::vector<FeatureLayer> layers;
  std::vector<std::uint32_t> labels;  // empty when unlabeled
  std::vector<Split> splits;          // empty means every sample is train
  std::map<std::string, std::string> extra;  // manifest keys not interpreted here

  std::size_t size() const { return layers.empty() ? 0 : layers.front().data.rows(); }
  bool has_labels() const { return !labels.empty(); }
  bool has_perturbed() const;
  Split split_of(std::size_t i) const { return splits.empty() ? Split::train : splits[i]; }
  const FeatureLayer& layer(std::string_view id) const;
};

// Throws on any broken invariant (shared N, label range, split length).
void validate(const FeatureSet& fs);

std::string encode_featureset(const FeatureSet& fs);
FeatureSet decode_featureset(std::string_view bytes);
void write_featureset(const FeatureSet& fs, const std::filesystem::path& path);
FeatureSet read_featureset(const std::filesystem::path& path);

// Rows selected by index, preserving labels and split tags.
FeatureSet subset(const FeatureSet& fs, std::span<const std::size_t> indices);
std::vector<std::size_t> indices_with_split(const FeatureSet& fs, Split s);
// Rows of one layer restricted to the given indices.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices);

// Assigns split tags (train, val, test fractions summing to 1), stratified by
// class when labels exist. Every split with a positive fraction must end up
// nonempty.
FeatureSet split(const FeatureSet& fs, std::array<double, 3> fractions, std::uint64_t seed);

// z ~ N(0, diag(4, 1)); x = (z1, z2 + 0.25 z1^2 - 1)
Matrix gen_banana(std::size_t n, std::uint64_t seed);
// Banana with x2 negated when flip is set, then shifted by offset along x2.
Matrix gen_shifted_banana(std::size_t n, double offset, bool flip, std::uint64_t seed);
Matrix gen_ring(std::size_t n, double radius, double noise, std::uint64_t seed);
Matrix gen_gaussian(std::size_t n, std::size_t dim, std::uint64_t seed);

enum class CovKind { tied, per_class };

// Tied: identity covariance for every class. Per-class: class c gets a
// diagonal covariance with entries drawn from uniform(0.25, 4).
FeatureSet gen_class_mixture(std::size_t n_per_class, const std::vector<Vector>& class_means,
                             CovKind cov, std::uint64_t seed);

// Class means +-sep along successive axes: class 2j -> +sep e_j, 2j+1 -> -sep e_j.
std::vector<Vector> axis_class_means(std::size_t classes, std::size_t dim, double sep);

struct SynthSpec {
  std::string kind = "gaussian";  // gaussian | banana | ring | mixture | shifted-ood
  std::size_t dim = 2;
  std::size_t n = 1000;  // per class for mixture
  std::size_t classes = 2;
  double sep = 3.0;
  double offset = 0.0;  // shift along the last coordinate
  bool flip = false;
  double radius = 3.0;
  double noise = 0.3;
  CovKind cov = CovKind::tied;
  std::size_t layers = 1;
  std::uint64_t layer_seed = 0;  // fixes the derived layer maps across files
  std::uint64_t seed = 0;
};

const std::vector<std::string>& synth_kinds();
FeatureSet synthesize(const SynthSpec& spec);

// Appends layers 1..count-1 computed as base * R_j + 0.05 noise, with R_j
// random d x d matrices drawn from layer_seed.
void add_derived_layers(FeatureSet& fs, std::size_t count, std::uint64_t layer_seed,
                        std::uint64_t noise_seed);

}  // namespace resflow
