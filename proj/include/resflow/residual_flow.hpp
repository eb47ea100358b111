#pragma once

// Residual flow: a frozen linear flow (the Gaussian fit) followed by coupling
// blocks and fixed permutations,
//
//   z = p_n . f_n . ... . p_1 . f_1 . A_dagger (x - mu)
//
// where p_i is a fixed random permutation for odd i and the half switch for
// even i (1-based). With every coupling block zero-initialized the flow is
// exactly the linear flow, so log-likelihoods start at the Gaussian baseline.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "resflow/coupling.hpp"
#include "resflow/gaussian.hpp"
#include "resflow/linalg.hpp"

namespace resflow {

inline constexpr std::size_t kDefaultBlocks = 10;

struct ResidualFlow {
  std::shared_ptr<const GaussianModel> linear;
  std::vector<CouplingBlock> blocks;
  std::vector<Permutation> perms;  // perms[i] follows blocks[i]
  std::size_t hidden = 0;
  double clamp = kDefaultScaleClamp;
  std::uint64_t seed = 0;

  std::size_t input_dim() const { return linear->dim(); }
  std::size_t dim() const { return linear->rank; }
};

// hidden == 0 selects default_hidden_width(rank).
ResidualFlow build_residual_flow(std::shared_ptr<const GaussianModel> gauss,
                                 std::size_t n_blocks, std::uint64_t seed,
                                 std::size_t hidden = 0, double clamp = kDefaultScaleClamp);

// A flow with no coupling blocks: the pure linear flow.
ResidualFlow linear_only_flow(std::shared_ptr<const GaussianModel> gauss);

// Per-block caches recorded by a reduced-space forward pass.
struct FlowTape {
  std::vector<CouplingCache> caches;
};

struct ReducedForward {
  Vector z;
  double logdet = 0.0;  // sum of coupling log-determinants
};

// Maps reduced coordinates (after the linear flow) to the latent.
ReducedForward flow_forward_reduced(const ResidualFlow& flow, std::span<const double> z0,
                                    FlowTape* tape = nullptr);
Vector flow_inverse_reduced(const ResidualFlow& flow, std::span<const double> z);

Vector resflow_forward(const ResidualFlow& flow, std::span<const double> x);
// Latent to input space; lifted through a_inverse when the rank is deficient.
Vector resflow_inverse(const ResidualFlow& flow, std::span<const double> z);

// Log-likelihood of a reduced vector z0 = A_dagger (x - mu).
double reduced_logprob(const ResidualFlow& flow, std::span<const double> z0);
double resflow_logprob(const ResidualFlow& flow, std::span<const double> x);

// Log-likelihood and its gradient with respect to x.
double resflow_logprob_grad(const ResidualFlow& flow, std::span<const double> x, Vector& grad_x);

Matrix resflow_sample(const ResidualFlow& flow, std::size_t n, std::uint64_t seed);

// Gradient buffers for every coupling block of a flow.
struct FlowGrad {
  std::vector<CouplingGrad> blocks;

  FlowGrad() = default;
  explicit FlowGrad(const ResidualFlow& flow);
  void clear();
};

// Adds d(-log p)/d(params) for one reduced sample and returns its log p.
double accumulate_nll_grad(const ResidualFlow& flow, std::span<const double> z0, FlowGrad& grad);

struct TrainConfig {
  double learning_rate = 1e-5;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 100;
  std::size_t eval_interval = 1;  // epochs
  std::size_t patience = 5;       // evaluations
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

struct TrainRecord {
  std::size_t step = 0;   // optimizer steps so far
  std::size_t epoch = 0;
  double train_ll = 0.0;  // mean log-likelihood per sample
  double val_ll = 0.0;
};

struct TrainHistory {
  std::vector<TrainRecord> records;
  std::size_t best_index = 0;
  bool stopped_early = false;

  double best_val_ll() const { return records.at(best_index).val_ll; }
};

// Epoch-at-a-time trainer. The linear block is never updated. The first
// evaluation (epoch 0) is recorded on construction.
class FlowTrainer {
 public:
  // train/val are in input space.
  FlowTrainer(ResidualFlow& flow, const Matrix& train, const Matrix& val, TrainConfig cfg);

  bool done() const noexcept { return done_; }
  std::size_t epoch() const noexcept { return epoch_; }
  // Runs one epoch and, on evaluation epochs, records validation likelihood.
  // Returns true when a new record was appended.
  bool step_epoch();
  // Restores the best checkpoint. Idempotent.
  void finish();
  const TrainHistory& history() const noexcept { return history_; }

 private:
  double mean_logprob(const Matrix& reduced) const;
  void evaluate(double train_ll);

  ResidualFlow* flow_;
  Matrix train_;
  Matrix val_;
  TrainConfig cfg_;
  std::vector<AdamState> s_states_;
  std::vector<AdamState> t_states_;
  std::vector<CouplingBlock> best_blocks_;
  TrainHistory history_;
  std::size_t epoch_ = 0;
  std::size_t steps_ = 0;
  std::size_t stale_ = 0;
  bool done_ = false;
  bool finished_ = false;
};

TrainHistory train_resflow(ResidualFlow& flow, const Matrix& train, const Matrix& val,
                           const TrainConfig& cfg);

// RFLOW1 file format (all fields 64-bit little-endian):
//   "RFLOW1\0\0", version, d, k, n_blocks, hidden, clamp (f64), seed,
//   mu[d], a_forward[k*d], logdet_half,
//   per block: s_net params, t_net params, perm kind, perm seed, indices[k].
// A file with zero blocks stores a pure linear flow.
std::string encode_flow(const ResidualFlow& flow);
ResidualFlow decode_flow(std::string_view bytes);
void save_flow(const ResidualFlow& flow, const std::filesystem::path& path);
ResidualFlow load_flow(const std::filesystem::path& path);

}  // namespace resflow
