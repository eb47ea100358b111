#include <cmath>
#include <string>

#include "binary_io.hpp"
#include "resflow/error.hpp"
#include "resflow/residual_flow.hpp"

namespace resflow {

namespace {

constexpr std::string_view kFlowMagic{"RFLOW1\0\0", 8};
constexpr std::uint64_t kFlowVersion = 1;

// Recovers eigenpairs from the rows of a_forward: row j is q_j / sqrt(lambda_j).
GaussianModel gaussian_from_forward_map(Vector mu, Matrix a_forward, double logdet_half) {
  const std::size_t k = a_forward.rows();
  const std::size_t d = a_forward.cols();
  GaussianModel g;
  g.rank = k;
  g.q_k = Matrix(d, k);
  g.d_k.resize(k);
  g.a_inverse = Matrix(d, k);
  g.sigma = Matrix(d, d);
  for (std::size_t j = 0; j < k; ++j) {
    const double norm_sq = dot(a_forward.row(j), a_forward.row(j));
    require(norm_sq > 0.0 && std::isfinite(norm_sq), Errc::numeric,
            "RFLOW1: linear map has a zero row");
    const double lambda = 1.0 / norm_sq;
    g.d_k[j] = lambda;
    const double root = std::sqrt(lambda);
    for (std::size_t i = 0; i < d; ++i) {
      g.q_k(i, j) = a_forward(j, i) * root;
      g.a_inverse(i, j) = a_forward(j, i) * lambda;
    }
  }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += g.q_k(a, j) * g.d_k[j] * g.q_k(b, j);
      g.sigma(a, b) = s;
    }
  g.mu = std::move(mu);
  g.a_forward = std::move(a_forward);
  g.logdet_half = logdet_half;
  return g;
}

}  // namespace

std::string encode_flow(const ResidualFlow& flow) {
  require(flow.linear != nullptr, Errc::state, "encode_flow: flow has no linear block");
  const GaussianModel& g = *flow.linear;
  detail::ByteWriter w;
  w.bytes(kFlowMagic);
  w.u64(kFlowVersion);
  w.u64(g.dim());
  w.u64(g.rank);
  w.u64(flow.blocks.size());
  w.u64(flow.hidden);
  w.f64(flow.clamp);
  w.u64(flow.seed);
  for (double v : g.mu) w.f64(v);
  for (double v : g.a_forward.data()) w.f64(v);
  w.f64(g.logdet_half);
  for (std::size_t i = 0; i < flow.blocks.size(); ++i) {
    const CouplingBlock& b = flow.blocks[i];
    require(b.s_net.hidden_dim() == flow.hidden && b.t_net.hidden_dim() == flow.hidden,
            Errc::state, "encode_flow: block hidden width differs from header");
    for (double v : b.s_net.params()) w.f64(v);
    for (double v : b.t_net.params()) w.f64(v);
    const Permutation& p = flow.perms.at(i);
    w.u64(static_cast<std::uint64_t>(p.kind));
    w.u64(p.seed);
    for (std::size_t idx : p.indices) w.u64(idx);
  }
  return std::move(w.str());
}

ResidualFlow decode_flow(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (bytes.size() < kFlowMagic.size() || bytes.substr(0, kFlowMagic.size()) != kFlowMagic)
    fail(Errc::bad_magic, "not an RFLOW1 file");
  r.bytes(kFlowMagic.size(), "magic");
  const std::uint64_t version = r.u64("header");
  require(version == kFlowVersion, Errc::unsupported_version,
          "unsupported RFLOW1 version " + std::to_string(version));
  const std::uint64_t d = r.u64("header");
  const std::uint64_t k = r.u64("header");
  const std::uint64_t n_blocks = r.u64("header");
  const std::uint64_t hidden = r.u64("header");
  const double clamp = r.f64("header");
  const std::uint64_t seed = r.u64("header");
  require(k >= 1 && k <= d && hidden >= 1 && clamp > 0.0, Errc::dim_mismatch,
          "RFLOW1: inconsistent header");
  // Guard against absurd sizes before allocating.
  r.need((d + k * d + 1) * 8, "linear map");

  Vector mu(d);
  for (double& v : mu) v = r.f64("linear map");
  Matrix a_forward(k, d);
  for (double& v : a_forward.data()) v = r.f64("linear map");
  const double logdet_half = r.f64("linear map");

  ResidualFlow flow;
  flow.linear = std::make_shared<const GaussianModel>(
      gaussian_from_forward_map(std::move(mu), std::move(a_forward), logdet_half));
  flow.hidden = hidden;
  flow.clamp = clamp;
  flow.seed = seed;
  for (std::uint64_t i = 0; i < n_blocks; ++i) {
    CouplingBlock b = make_coupling_block(k, hidden, clamp);
    r.need((b.s_net.param_count() + b.t_net.param_count() + 2 + k) * 8, "block tensor");
    for (double& v : b.s_net.params()) v = r.f64("block tensor");
    for (double& v : b.t_net.params()) v = r.f64("block tensor");
    Permutation p;
    const std::uint64_t kind = r.u64("permutation");
    require(kind <= 1, Errc::invalid_argument, "RFLOW1: unknown permutation kind");
    p.kind = static_cast<PermKind>(kind);
    p.seed = r.u64("permutation");
    p.indices.resize(k);
    for (auto& idx : p.indices) idx = r.u64("permutation");
    validate_permutation(p);
    flow.blocks.push_back(std::move(b));
    flow.perms.push_back(std::move(p));
  }
  require(r.remaining() == 0, Errc::dim_mismatch, "RFLOW1: trailing bytes after last block");
  return flow;
}

void save_flow(const ResidualFlow& flow, const std::filesystem::path& path) {
  detail::write_file(path, encode_flow(flow));
}

ResidualFlow load_flow(const std::filesystem::path& path) {
  return decode_flow(detail::read_file(path));
}

}  // namespace resflow
