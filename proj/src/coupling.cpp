#include "resflow/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "resflow/error.hpp"

namespace resflow {

namespace {

double leaky(double x, double slope) { return x > 0.0 ? x : slope * x; }
double leaky_grad(double x, double slope) { return x > 0.0 ? 1.0 : slope; }

// y = W x + b for a row-major (out x in) W.
void affine(std::span<const double> w, std::span<const double> b, std::span<const double> x,
            std::span<double> y) {
  const std::size_t in = x.size();
  for (std::size_t r = 0; r < y.size(); ++r) {
    double s = b[r];
    const double* wr = w.data() + r * in;
    for (std::size_t c = 0; c < in; ++c) s += wr[c] * x[c];
    y[r] = s;
  }
}

// grad_w += g x^T, grad_b += g, returns W^T g.
Vector affine_backward(std::span<const double> w, std::span<const double> x,
                       std::span<const double> g, std::span<double> grad_w,
                       std::span<double> grad_b) {
  const std::size_t in = x.size();
  Vector gx(in, 0.0);
  for (std::size_t r = 0; r < g.size(); ++r) {
    const double gr = g[r];
    grad_b[r] += gr;
    if (gr == 0.0) continue;
    const double* wr = w.data() + r * in;
    double* gwr = grad_w.data() + r * in;
    for (std::size_t c = 0; c < in; ++c) {
      gwr[c] += gr * x[c];
      gx[c] += wr[c] * gr;
    }
  }
  return gx;
}

}  // namespace

DenseNet3::DenseNet3(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim,
                     double slope)
    : in_(in_dim), hidden_(hidden_dim), out_(out_dim), slope_(slope) {
  require(hidden_dim > 0, Errc::invalid_argument, "hidden width must be positive");
  const std::size_t n = hidden_ * in_ + hidden_ + hidden_ * hidden_ + hidden_ + out_ * hidden_ + out_;
  params_.assign(n, 0.0);
}

std::size_t DenseNet3::layer_in(std::size_t layer) const { return layer == 0 ? in_ : hidden_; }
std::size_t DenseNet3::layer_out(std::size_t layer) const { return layer == 2 ? out_ : hidden_; }

std::size_t DenseNet3::offset_w(std::size_t layer) const {
  std::size_t off = 0;
  for (std::size_t l = 0; l < layer; ++l) off += layer_out(l) * layer_in(l) + layer_out(l);
  return off;
}

std::size_t DenseNet3::offset_b(std::size_t layer) const {
  return offset_w(layer) + layer_out(layer) * layer_in(layer);
}

std::span<double> DenseNet3::weight(std::size_t layer) {
  return std::span<double>(params_).subspan(offset_w(layer), layer_out(layer) * layer_in(layer));
}
std::span<const double> DenseNet3::weight(std::size_t layer) const {
  return std::span<const double>(params_).subspan(offset_w(layer),
                                                  layer_out(layer) * layer_in(layer));
}
std::span<double> DenseNet3::bias(std::size_t layer) {
  return std::span<double>(params_).subspan(offset_b(layer), layer_out(layer));
}
std::span<const double> DenseNet3::bias(std::size_t layer) const {
  return std::span<const double>(params_).subspan(offset_b(layer), layer_out(layer));
}

Vector DenseNet3::forward(std::span<const double> x, Cache* cache) const {
  require(x.size() == in_, Errc::dim_mismatch, "DenseNet3: input dimension mismatch");
  Vector pre1(hidden_), post1(hidden_), pre2(hidden_), post2(hidden_), out(out_);
  affine(weight(0), bias(0), x, pre1);
  for (std::size_t i = 0; i < hidden_; ++i) post1[i] = leaky(pre1[i], slope_);
  affine(weight(1), bias(1), post1, pre2);
  for (std::size_t i = 0; i < hidden_; ++i) post2[i] = leaky(pre2[i], slope_);
  affine(weight(2), bias(2), post2, out);
  if (cache) {
    cache->input.assign(x.begin(), x.end());
    cache->pre1 = std::move(pre1);
    cache->post1 = std::move(post1);
    cache->pre2 = std::move(pre2);
    cache->post2 = std::move(post2);
  }
  return out;
}

Vector DenseNet3::backward(const Cache& cache, std::span<const double> grad_out,
                           std::span<double> grad_params) const {
  require(grad_params.size() == params_.size(), Errc::dim_mismatch,
          "DenseNet3: gradient buffer has wrong size");
  require(cache.input.size() == in_ && cache.post2.size() == hidden_, Errc::state,
          "DenseNet3: backward called without a forward cache");
  auto gw = [&](std::size_t l) { return grad_params.subspan(offset_w(l), layer_out(l) * layer_in(l)); };
  auto gb = [&](std::size_t l) { return grad_params.subspan(offset_b(l), layer_out(l)); };

  Vector g2 = affine_backward(weight(2), cache.post2, grad_out, gw(2), gb(2));
  for (std::size_t i = 0; i < hidden_; ++i) g2[i] *= leaky_grad(cache.pre2[i], slope_);
  Vector g1 = affine_backward(weight(1), cache.post1, g2, gw(1), gb(1));
  for (std::size_t i = 0; i < hidden_; ++i) g1[i] *= leaky_grad(cache.pre1[i], slope_);
  return affine_backward(weight(0), cache.input, g1, gw(0), gb(0));
}

void DenseNet3::init_uniform(Rng& rng) {
  for (std::size_t l = 0; l < 3; ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(layer_in(l), 1)));
    for (double& w : weight(l)) w = rng.uniform(-bound, bound);
    for (double& b : bias(l)) b = rng.uniform(-bound, bound);
  }
}

void DenseNet3::zero_last_layer() {
  std::ranges::fill(weight(2), 0.0);
  std::ranges::fill(bias(2), 0.0);
}

std::size_t default_hidden_width(std::size_t dim) { return std::max<std::size_t>(2 * (dim / 2), 32); }

CouplingBlock make_coupling_block(std::size_t dim, std::size_t hidden, double clamp) {
  require(dim >= 1, Errc::invalid_argument, "coupling block needs dimension >= 1");
  require(clamp > 0.0, Errc::invalid_argument, "scale clamp must be positive");
  CouplingBlock b;
  b.d1 = (dim + 1) / 2;
  b.d2 = dim / 2;
  b.clamp = clamp;
  b.s_net = DenseNet3(b.d1, hidden, b.d2);
  b.t_net = DenseNet3(b.d1, hidden, b.d2);
  return b;
}

void zero_init_last_layer(CouplingBlock& block, std::uint64_t seed) {
  Rng rng(seed);
  block.s_net.init_uniform(rng);
  block.t_net.init_uniform(rng);
  block.s_net.zero_last_layer();
  block.t_net.zero_last_layer();
}

void randomize_block(CouplingBlock& block, std::uint64_t seed, double scale) {
  Rng rng(seed);
  block.s_net.init_uniform(rng);
  block.t_net.init_uniform(rng);
  for (double& p : block.s_net.params()) p *= scale;
  for (double& p : block.t_net.params()) p *= scale;
}

CouplingOutput coupling_forward(const CouplingBlock& block, std::span<const double> x,
                                CouplingCache* cache) {
  require(x.size() == block.dim(), Errc::dim_mismatch,
          "coupling_forward: expected dimension " + std::to_string(block.dim()) + ", got " +
              std::to_string(x.size()));
  const auto x1 = x.first(block.d1);
  const auto x2 = x.subspan(block.d1);
  Vector s = block.s_net.forward(x1, cache ? &cache->s_cache : nullptr);
  const Vector t = block.t_net.forward(x1, cache ? &cache->t_cache : nullptr);

  std::vector<char> live(block.d2, 1);
  for (std::size_t i = 0; i < block.d2; ++i) {
    if (!std::isfinite(s[i])) fail(Errc::numeric, "coupling_forward: non-finite scale output");
    if (s[i] > block.clamp || s[i] < -block.clamp) {
      s[i] = std::clamp(s[i], -block.clamp, block.clamp);
      live[i] = 0;
    }
  }

  CouplingOutput out;
  out.z.assign(x.begin(), x.end());
  for (std::size_t i = 0; i < block.d2; ++i) {
    out.z[block.d1 + i] = x2[i] * std::exp(s[i]) + t[i];
    out.logdet += s[i];
  }
  if (cache) {
    cache->x.assign(x.begin(), x.end());
    cache->scale = std::move(s);
    cache->live = std::move(live);
    cache->valid = true;
  }
  return out;
}

Vector coupling_inverse(const CouplingBlock& block, std::span<const double> z) {
  require(z.size() == block.dim(), Errc::dim_mismatch,
          "coupling_inverse: expected dimension " + std::to_string(block.dim()) + ", got " +
              std::to_string(z.size()));
  const auto z1 = z.first(block.d1);
  const Vector s = block.s_net.forward(z1);
  const Vector t = block.t_net.forward(z1);
  Vector x(z.begin(), z.end());
  for (std::size_t i = 0; i < block.d2; ++i) {
    if (!std::isfinite(s[i])) fail(Errc::numeric, "coupling_inverse: non-finite scale output");
    const double si = std::clamp(s[i], -block.clamp, block.clamp);
    x[block.d1 + i] = (z[block.d1 + i] - t[i]) * std::exp(-si);
  }
  return x;
}

void CouplingGrad::clear() {
  std::ranges::fill(s_params, 0.0);
  std::ranges::fill(t_params, 0.0);
}

Vector coupling_backward(const CouplingBlock& block, const CouplingCache& cache,
                         std::span<const double> grad_z, double grad_logdet, CouplingGrad& grads) {
  require(cache.valid, Errc::state, "coupling_backward: missing forward cache");
  require(grad_z.size() == block.dim(), Errc::dim_mismatch, "coupling_backward: gradient size");
  require(grads.s_params.size() == block.s_net.param_count() &&
              grads.t_params.size() == block.t_net.param_count(),
          Errc::dim_mismatch, "coupling_backward: gradient buffers do not match block");

  const std::size_t d1 = block.d1;
  Vector grad_x(block.dim());
  Vector grad_s(block.d2);
  Vector grad_t(block.d2);
  for (std::size_t i = 0; i < block.d2; ++i) {
    const double e = std::exp(cache.scale[i]);
    const double gz2 = grad_z[d1 + i];
    grad_x[d1 + i] = gz2 * e;
    grad_s[i] = cache.live[i] ? gz2 * cache.x[d1 + i] * e + grad_logdet : 0.0;
    grad_t[i] = gz2;
  }
  const Vector gx1_s = block.s_net.backward(cache.s_cache, grad_s, grads.s_params);
  const Vector gx1_t = block.t_net.backward(cache.t_cache, grad_t, grads.t_params);
  for (std::size_t i = 0; i < d1; ++i) grad_x[i] = grad_z[i] + gx1_s[i] + gx1_t[i];
  return grad_x;
}

Permutation make_switch_permutation(std::size_t k) {
  Permutation p;
  p.kind = PermKind::switch_halves;
  const std::size_t d1 = (k + 1) / 2;
  p.indices.resize(k);
  for (std::size_t i = 0; i < k; ++i) p.indices[i] = (i + d1) % k;
  return p;
}

Permutation make_random_permutation(std::size_t k, std::uint64_t seed) {
  Permutation p;
  p.kind = PermKind::fixed_random;
  p.seed = seed;
  p.indices.resize(k);
  std::iota(p.indices.begin(), p.indices.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = k; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(p.indices[i - 1], p.indices[j]);
  }
  return p;
}

void validate_permutation(const Permutation& perm) {
  std::vector<char> seen(perm.indices.size(), 0);
  for (std::size_t idx : perm.indices) {
    require(idx < seen.size() && !seen[idx], Errc::invalid_argument,
            "permutation indices are not a bijection");
    seen[idx] = 1;
  }
}

Vector apply_permutation(const Permutation& perm, std::span<const double> v) {
  require(v.size() == perm.indices.size(), Errc::dim_mismatch,
          "apply_permutation: length mismatch");
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[perm.indices[i]];
  return out;
}

Vector invert_permutation(const Permutation& perm, std::span<const double> v) {
  require(v.size() == perm.indices.size(), Errc::dim_mismatch,
          "invert_permutation: length mismatch");
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[perm.indices[i]] = v[i];
  return out;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  require(params.size() == grads.size() && params.size() == state.m.size() &&
              params.size() == state.v.size(),
          Errc::dim_mismatch, "adam_step: parameter, gradient and state sizes differ");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

}  // namespace resflow
