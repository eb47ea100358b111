#pragma once

// Numerical checks shared by the unit tests and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "oracles.hpp"
#include "resflow/coupling.hpp"
#include "resflow/residual_flow.hpp"

namespace checks {

using namespace resflow;

// max_i |g_i - fd_i| / max_i |fd_i| between coupling_backward parameter
// gradients and central differences of L = a . z + w * logdet.
inline double coupling_grad_rel_error(CouplingBlock block, const Vector& x, const Vector& a,
                                      double w, double h = 1e-6) {
  auto loss = [&](const CouplingBlock& b) {
    const auto out = coupling_forward(b, x);
    double l = w * out.logdet;
    for (std::size_t i = 0; i < a.size(); ++i) l += a[i] * out.z[i];
    return l;
  };
  CouplingCache cache;
  coupling_forward(block, x, &cache);
  CouplingGrad g(block);
  coupling_backward(block, cache, a, w, g);

  double worst = 0.0, norm = 0.0;
  auto sweep = [&](std::span<double> params, const Vector& analytic) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double keep = params[i];
      params[i] = keep + h;
      const double lp = loss(block);
      params[i] = keep - h;
      const double lm = loss(block);
      params[i] = keep;
      const double fd = (lp - lm) / (2.0 * h);
      norm = std::max(norm, std::fabs(fd));
      worst = std::max(worst, std::fabs(fd - analytic[i]));
    }
  };
  sweep(block.s_net.params(), g.s_params);
  sweep(block.t_net.params(), g.t_params);
  return norm > 0.0 ? worst / norm : worst;
}

// |logdet reported by the flow - ln|det J_fd|| at x, full-rank flows only.
inline double logdet_gap(const ResidualFlow& flow, const Vector& x, double h = 1e-5) {
  const Vector z = resflow_forward(flow, x);
  const double reported = resflow_logprob(flow, x) - standard_normal_logpdf(z);
  const Matrix j = oracle::fd_jacobian([&](const Vector& v) { return resflow_forward(flow, v); }, x, h);
  return std::fabs(reported - oracle::log_abs_det(j));
}

// A full-rank residual flow with every coupling parameter randomized.
inline ResidualFlow random_flow(std::size_t d, std::size_t blocks, std::uint64_t seed,
                                double scale = 0.5) {
  Matrix x = sample_standard_normal(200, d, mix_seed(seed, 1));
  const Matrix mix = sample_standard_normal(d, d, mix_seed(seed, 2));
  x = matmul(x, mix);
  auto gauss = std::make_shared<const GaussianModel>(fit_gaussian(x));
  ResidualFlow flow = build_residual_flow(gauss, blocks, seed, 8);
  for (std::size_t i = 0; i < flow.blocks.size(); ++i)
    randomize_block(flow.blocks[i], mix_seed(seed, 100 + i), scale);
  return flow;
}

}  // namespace checks
