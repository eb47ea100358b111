#pragma once

// Affine coupling blocks with 3-layer fully connected scale/translation
// networks, hand-written reverse mode, fixed permutations and Adam.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "resflow/linalg.hpp"

namespace resflow {

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kDefaultScaleClamp = 15.0;

// Three affine layers; leaky rectifier after the first two.
// Parameters live in one flat buffer laid out as W1 b1 W2 b2 W3 b3, with
// weights row-major (out x in).
class DenseNet3 {
 public:
  struct Cache {
    Vector input, pre1, post1, pre2, post2;
  };

  DenseNet3() = default;
  DenseNet3(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim,
            double slope = kLeakySlope);

  std::size_t in_dim() const noexcept { return in_; }
  std::size_t hidden_dim() const noexcept { return hidden_; }
  std::size_t out_dim() const noexcept { return out_; }
  double slope() const noexcept { return slope_; }

  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }
  std::size_t param_count() const noexcept { return params_.size(); }

  // layer in {0, 1, 2}
  std::span<double> weight(std::size_t layer);
  std::span<const double> weight(std::size_t layer) const;
  std::span<double> bias(std::size_t layer);
  std::span<const double> bias(std::size_t layer) const;
  std::size_t layer_in(std::size_t layer) const;
  std::size_t layer_out(std::size_t layer) const;

  Vector forward(std::span<const double> x, Cache* cache = nullptr) const;

  // Accumulates d(loss)/d(params) into grad_params and returns d(loss)/d(input).
  Vector backward(const Cache& cache, std::span<const double> grad_out,
                  std::span<double> grad_params) const;

  // Every layer drawn from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  void init_uniform(Rng& rng);
  void zero_last_layer();

  friend bool operator==(const DenseNet3&, const DenseNet3&) = default;

 private:
  std::size_t offset_w(std::size_t layer) const;
  std::size_t offset_b(std::size_t layer) const;

  std::size_t in_ = 0;
  std::size_t hidden_ = 0;
  std::size_t out_ = 0;
  double slope_ = kLeakySlope;
  std::vector<double> params_;
};

// z1 = x1, z2 = x2 * exp(s(x1)) + t(x1) with x1 the first d1 = ceil(d/2)
// entries. Scale outputs are clamped to [-clamp, clamp].
struct CouplingBlock {
  DenseNet3 s_net;
  DenseNet3 t_net;
  std::size_t d1 = 0;
  std::size_t d2 = 0;
  double clamp = kDefaultScaleClamp;

  std::size_t dim() const noexcept { return d1 + d2; }
  friend bool operator==(const CouplingBlock&, const CouplingBlock&) = default;
};

std::size_t default_hidden_width(std::size_t dim);

// Parameters are all zero until an initializer runs.
CouplingBlock make_coupling_block(std::size_t dim, std::size_t hidden,
                                  double clamp = kDefaultScaleClamp);

// Layers 1-2 of both nets drawn from the uniform scheme, layer 3 zeroed, so
// the block is the identity map.
void zero_init_last_layer(CouplingBlock& block, std::uint64_t seed);

// All layers drawn from the uniform scheme scaled by `scale` (tests, oracles).
void randomize_block(CouplingBlock& block, std::uint64_t seed, double scale = 1.0);

struct CouplingCache {
  DenseNet3::Cache s_cache;
  DenseNet3::Cache t_cache;
  Vector x;
  Vector scale;            // clamped s(x1)
  std::vector<char> live;  // 1 where the clamp was inactive
  bool valid = false;
};

struct CouplingOutput {
  Vector z;
  double logdet = 0.0;
};

CouplingOutput coupling_forward(const CouplingBlock& block, std::span<const double> x,
                                CouplingCache* cache = nullptr);
Vector coupling_inverse(const CouplingBlock& block, std::span<const double> z);

struct CouplingGrad {
  Vector s_params;
  Vector t_params;

  CouplingGrad() = default;
  explicit CouplingGrad(const CouplingBlock& block)
      : s_params(block.s_net.param_count(), 0.0), t_params(block.t_net.param_count(), 0.0) {}
  void clear();
};

// Given d(loss)/dz and d(loss)/d(logdet), accumulates parameter gradients and
// returns d(loss)/dx.
Vector coupling_backward(const CouplingBlock& block, const CouplingCache& cache,
                         std::span<const double> grad_z, double grad_logdet, CouplingGrad& grads);

enum class PermKind : std::uint8_t { switch_halves = 0, fixed_random = 1 };

// out[i] = v[indices[i]]
struct Permutation {
  PermKind kind = PermKind::switch_halves;
  std::vector<std::size_t> indices;
  std::uint64_t seed = 0;

  friend bool operator==(const Permutation&, const Permutation&) = default;
};

// Moves the trailing floor(k/2) entries in front of the leading ceil(k/2).
Permutation make_switch_permutation(std::size_t k);
Permutation make_random_permutation(std::size_t k, std::uint64_t seed);
// Throws unless indices is a bijection on [0, k).
void validate_permutation(const Permutation& perm);

Vector apply_permutation(const Permutation& perm, std::span<const double> v);
Vector invert_permutation(const Permutation& perm, std::span<const double> v);

struct AdamState {
  std::size_t step = 0;
  Vector m;
  Vector v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr = 1e-5;

  AdamState() = default;
  AdamState(std::size_t n, double learning_rate) : m(n, 0.0), v(n, 0.0), lr(learning_rate) {}
};

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

}  // namespace resflow
