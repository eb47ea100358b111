#include "resflow/residual_flow.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "resflow/error.hpp"

namespace resflow {

namespace {

void require_linear(const ResidualFlow& flow) {
  require(flow.linear != nullptr, Errc::state, "residual flow has no linear block");
}

[[noreturn]] void rethrow_with_block(const Error& e, std::size_t block) {
  throw Error(e.code(), std::string(e.what()) + " (block " + std::to_string(block) + ")");
}

}  // namespace

ResidualFlow build_residual_flow(std::shared_ptr<const GaussianModel> gauss, std::size_t n_blocks,
                                 std::uint64_t seed, std::size_t hidden, double clamp) {
  require(gauss != nullptr, Errc::invalid_argument, "build_residual_flow: no Gaussian model");
  require(n_blocks >= 1, Errc::invalid_argument, "build_residual_flow: n_blocks must be >= 1");
  ResidualFlow flow;
  flow.linear = std::move(gauss);
  const std::size_t k = flow.linear->rank;
  flow.hidden = hidden == 0 ? default_hidden_width(k) : hidden;
  flow.clamp = clamp;
  flow.seed = seed;
  flow.blocks.reserve(n_blocks);
  flow.perms.reserve(n_blocks);
  for (std::size_t i = 0; i < n_blocks; ++i) {
    CouplingBlock block = make_coupling_block(k, flow.hidden, clamp);
    zero_init_last_layer(block, mix_seed(seed, 2 * i));
    flow.blocks.push_back(std::move(block));
    // 1-based odd positions get a random permutation, even positions the switch.
    flow.perms.push_back(i % 2 == 0 ? make_random_permutation(k, mix_seed(seed, 2 * i + 1))
                                    : make_switch_permutation(k));
  }
  return flow;
}

ResidualFlow linear_only_flow(std::shared_ptr<const GaussianModel> gauss) {
  require(gauss != nullptr, Errc::invalid_argument, "linear_only_flow: no Gaussian model");
  ResidualFlow flow;
  flow.linear = std::move(gauss);
  flow.hidden = default_hidden_width(flow.linear->rank);
  return flow;
}

ReducedForward flow_forward_reduced(const ResidualFlow& flow, std::span<const double> z0,
                                    FlowTape* tape) {
  ReducedForward out;
  out.z.assign(z0.begin(), z0.end());
  if (tape) tape->caches.resize(flow.blocks.size());
  for (std::size_t i = 0; i < flow.blocks.size(); ++i) {
    try {
      CouplingOutput step =
          coupling_forward(flow.blocks[i], out.z, tape ? &tape->caches[i] : nullptr);
      out.logdet += step.logdet;
      out.z = apply_permutation(flow.perms[i], step.z);
    } catch (const Error& e) {
      rethrow_with_block(e, i);
    }
    for (double v : out.z)
      if (!std::isfinite(v))
        fail(Errc::numeric, "non-finite activation after block " + std::to_string(i));
  }
  return out;
}

Vector flow_inverse_reduced(const ResidualFlow& flow, std::span<const double> z) {
  Vector h(z.begin(), z.end());
  for (std::size_t i = flow.blocks.size(); i-- > 0;) {
    try {
      h = coupling_inverse(flow.blocks[i], invert_permutation(flow.perms[i], h));
    } catch (const Error& e) {
      rethrow_with_block(e, i);
    }
  }
  return h;
}

Vector resflow_forward(const ResidualFlow& flow, std::span<const double> x) {
  require_linear(flow);
  return flow_forward_reduced(flow, linear_forward(*flow.linear, x)).z;
}

Vector resflow_inverse(const ResidualFlow& flow, std::span<const double> z) {
  require_linear(flow);
  return linear_inverse(*flow.linear, flow_inverse_reduced(flow, z));
}

double reduced_logprob(const ResidualFlow& flow, std::span<const double> z0) {
  const ReducedForward f = flow_forward_reduced(flow, z0);
  // Same association as gaussian_logprob so an identity residual part adds an exact 0.
  return (standard_normal_logpdf(f.z) - flow.linear->logdet_half) + f.logdet;
}

double resflow_logprob(const ResidualFlow& flow, std::span<const double> x) {
  require_linear(flow);
  return reduced_logprob(flow, linear_forward(*flow.linear, x));
}

double resflow_logprob_grad(const ResidualFlow& flow, std::span<const double> x, Vector& grad_x) {
  require_linear(flow);
  const Vector z0 = linear_forward(*flow.linear, x);
  FlowTape tape;
  const ReducedForward f = flow_forward_reduced(flow, z0, &tape);

  // d(log p)/dz = -z, d(log p)/d(logdet) = +1.
  Vector g(f.z.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = -f.z[i];
  for (std::size_t i = flow.blocks.size(); i-- > 0;) {
    g = invert_permutation(flow.perms[i], g);
    CouplingGrad scratch(flow.blocks[i]);
    g = coupling_backward(flow.blocks[i], tape.caches[i], g, 1.0, scratch);
  }
  grad_x = matvec_t(flow.linear->a_forward, g);
  return (standard_normal_logpdf(f.z) - flow.linear->logdet_half) + f.logdet;
}

Matrix resflow_sample(const ResidualFlow& flow, std::size_t n, std::uint64_t seed) {
  require_linear(flow);
  const std::size_t k = flow.dim();
  Matrix out(n, flow.input_dim());
  Rng rng(seed);
  Vector z(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& v : z) v = rng.normal();
    const Vector x = resflow_inverse(flow, z);
    std::copy(x.begin(), x.end(), out.row(i).begin());
  }
  return out;
}

FlowGrad::FlowGrad(const ResidualFlow& flow) {
  blocks.reserve(flow.blocks.size());
  for (const auto& b : flow.blocks) blocks.emplace_back(b);
}

void FlowGrad::clear() {
  for (auto& b : blocks) b.clear();
}

double accumulate_nll_grad(const ResidualFlow& flow, std::span<const double> z0, FlowGrad& grad) {
  FlowTape tape;
  const ReducedForward f = flow_forward_reduced(flow, z0, &tape);
  // loss = 0.5 |z|^2 - logdet + const
  Vector g = f.z;
  for (std::size_t i = flow.blocks.size(); i-- > 0;) {
    g = invert_permutation(flow.perms[i], g);
    g = coupling_backward(flow.blocks[i], tape.caches[i], g, -1.0, grad.blocks[i]);
  }
  return (standard_normal_logpdf(f.z) - flow.linear->logdet_half) + f.logdet;
}

void validate(const TrainConfig& cfg) {
  require(cfg.learning_rate >= 0.0 && std::isfinite(cfg.learning_rate), Errc::invalid_argument,
          "learning rate must be finite and non-negative");
  require(cfg.batch_size > 0, Errc::invalid_argument, "batch size must be positive");
  require(cfg.eval_interval > 0, Errc::invalid_argument, "eval interval must be positive");
  require(cfg.patience > 0, Errc::invalid_argument, "patience must be positive");
}

namespace {

Matrix reduce_all(const GaussianModel& g, const Matrix& x) {
  Matrix out(x.rows(), g.rank);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const Vector z = linear_forward(g, x.row(i));
    std::copy(z.begin(), z.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace

FlowTrainer::FlowTrainer(ResidualFlow& flow, const Matrix& train, const Matrix& val,
                         TrainConfig cfg)
    : flow_(&flow), cfg_(cfg) {
  require_linear(flow);
  validate(cfg_);
  require(train.rows() > 0, Errc::invalid_argument, "empty training set");
  require(val.rows() > 0, Errc::invalid_argument, "empty validation set");
  require(train.cols() == flow.input_dim() && val.cols() == flow.input_dim(), Errc::dim_mismatch,
          "training data dimension does not match the flow");
  train_ = reduce_all(*flow.linear, train);
  val_ = reduce_all(*flow.linear, val);
  for (const auto& b : flow.blocks) {
    s_states_.emplace_back(b.s_net.param_count(), cfg_.learning_rate);
    t_states_.emplace_back(b.t_net.param_count(), cfg_.learning_rate);
  }
  evaluate(mean_logprob(train_));
  if (cfg_.max_epochs == 0 || flow.blocks.empty()) done_ = true;
}

double FlowTrainer::mean_logprob(const Matrix& reduced) const {
  double s = 0.0;
  for (std::size_t i = 0; i < reduced.rows(); ++i) s += reduced_logprob(*flow_, reduced.row(i));
  return s / static_cast<double>(reduced.rows());
}

void FlowTrainer::evaluate(double train_ll) {
  TrainRecord rec;
  rec.step = steps_;
  rec.epoch = epoch_;
  rec.train_ll = train_ll;
  rec.val_ll = mean_logprob(val_);
  require(std::isfinite(rec.val_ll), Errc::numeric, "validation log-likelihood is not finite");
  history_.records.push_back(rec);
  const std::size_t idx = history_.records.size() - 1;
  if (idx == 0 || rec.val_ll > history_.best_val_ll()) {
    history_.best_index = idx;
    best_blocks_ = flow_->blocks;
    stale_ = 0;
  } else {
    ++stale_;
  }
}

bool FlowTrainer::step_epoch() {
  if (done_) return false;
  ++epoch_;
  const std::size_t n = train_.rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(cfg_.seed, epoch_));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  FlowGrad grad(*flow_);
  double ll_sum = 0.0;
  for (std::size_t start = 0; start < n; start += cfg_.batch_size) {
    const std::size_t stop = std::min(n, start + cfg_.batch_size);
    grad.clear();
    for (std::size_t j = start; j < stop; ++j) {
      const double ll = accumulate_nll_grad(*flow_, train_.row(order[j]), grad);
      require(std::isfinite(ll), Errc::numeric, "training log-likelihood is not finite");
      ll_sum += ll;
    }
    const double inv = 1.0 / static_cast<double>(stop - start);
    for (std::size_t b = 0; b < flow_->blocks.size(); ++b) {
      for (double& g : grad.blocks[b].s_params) g *= inv;
      for (double& g : grad.blocks[b].t_params) g *= inv;
      adam_step(flow_->blocks[b].s_net.params(), grad.blocks[b].s_params, s_states_[b]);
      adam_step(flow_->blocks[b].t_net.params(), grad.blocks[b].t_params, t_states_[b]);
    }
    ++steps_;
  }

  bool recorded = false;
  if (epoch_ % cfg_.eval_interval == 0) {
    evaluate(ll_sum / static_cast<double>(n));
    recorded = true;
    if (stale_ >= cfg_.patience) {
      history_.stopped_early = true;
      done_ = true;
    }
  }
  if (epoch_ >= cfg_.max_epochs) done_ = true;
  return recorded;
}

void FlowTrainer::finish() {
  if (finished_) return;
  done_ = true;
  finished_ = true;
  flow_->blocks = best_blocks_;
}

TrainHistory train_resflow(ResidualFlow& flow, const Matrix& train, const Matrix& val,
                           const TrainConfig& cfg) {
  FlowTrainer trainer(flow, train, val, cfg);
  while (!trainer.done()) trainer.step_epoch();
  trainer.finish();
  return trainer.history();
}

}  // namespace resflow
