// Training stage: joint stochastic gradient ascent on the InfoNCE bound with
// respect to the designs (or discrete policy logits) and the critic.

#pragma once

#include "mvbed/critic.hpp"
#include "mvbed/models.hpp"

#include <optional>
#include <variant>
#include <vector>

namespace mvbed {

struct TrainConfig {
  long steps = 50000;
  Index batch_size = 2048;
  double learning_rate = 1e-3;
  double lr_decay = 0.96;
  long lr_decay_interval = 1000;
  double initial_temperature = 2.0;
  double temperature_decay = 0.5;
  long temperature_interval = 10000;
  double hard_fraction = 0.2;  // hard Gumbel-Softmax for the final fraction of steps
  long log_interval = 100;
  // Fresh batches used to re-estimate batch-norm statistics after training.
  Index bn_calibration_batches = 50;

  void validate() const;
};

struct ContinuousDesign {
  Vector actions;
};

struct DiscretePolicy {
  Matrix logits;  // [D, K]
  double temperature = 2.0;
  bool hard = false;
};

using DesignSpec = std::variant<ContinuousDesign, DiscretePolicy>;

struct TrainRecord {
  long step = 0;
  double loss = 0.0;   // -bound, averaged over the interval
  double bound = 0.0;  // averaged over the interval
  double learning_rate = 0.0;
  double temperature = 0.0;
  bool hard = false;
};

struct TrainLog {
  std::vector<TrainRecord> records;
};

struct TrainResult {
  DesignSpec design;
  SeparableCritic critic;
  TrainLog log;
};

struct AnnealState {
  double temperature;
  bool hard;
};

// tau = tau0 * decay^floor(step / interval); hard once step >= (1 - hard_fraction) * steps.
AnnealState anneal_schedule(long step, const TrainConfig& cfg);

// Gumbel-Softmax policy: softmax((logits + gumbel) / tau) per row. In hard mode
// the forward value is the one-hot row argmax and gradients use the soft rows.
ad::Var gumbel_softmax_relax(const ad::Var& logits, double temperature, const Matrix& gumbel, bool hard);
ad::Var gumbel_softmax_relax(const ad::Var& logits, double temperature, RngStream& rng, bool hard);

// Outcomes [B, D] whose mean for design d is sum_k policy[d, k] * f(psi, k, c_d).
ad::Var relaxed_outcomes(const DiscreteQuadraticModel& model, const Matrix& psi, const ad::Var& policy,
                         const Vector& contexts, const Matrix& noise);

ContinuousDesign initial_design(const ContinuousBumpModel& model, Index count, RngStream& rng);
DiscretePolicy initial_policy(const DiscreteQuadraticModel& model, Index count, const TrainConfig& cfg);

TrainResult train_designs(const ContinuousBumpModel& model, const ContextPair& contexts, ContinuousDesign init,
                          SeparableCritic critic, const TrainConfig& cfg, RngStream& rng);
TrainResult train_designs(const DiscreteQuadraticModel& model, const ContextPair& contexts, DiscretePolicy init,
                          SeparableCritic critic, const TrainConfig& cfg, RngStream& rng);

// Critic-only training against fixed concrete designs.
TrainResult train_critic(const ContinuousBumpModel& model, const ContextPair& contexts, const Vector& design,
                         SeparableCritic critic, const TrainConfig& cfg, RngStream& rng);
TrainResult train_critic(const DiscreteQuadraticModel& model, const ContextPair& contexts, const std::vector<int>& design,
                         SeparableCritic critic, const TrainConfig& cfg, RngStream& rng);

Vector extract_design(const ContinuousBumpModel& model, const ContinuousDesign& spec);
std::vector<int> extract_design(const DiscreteQuadraticModel& model, const DiscretePolicy& spec);

// One evaluation of the objective and its gradients; exposed for tests.
struct ObjectiveGradients {
  double bound = 0.0;
  Matrix design_gradient;  // d bound / d design; empty for fixed designs
  std::vector<Matrix> critic_gradients;
};

ObjectiveGradients objective_gradients(const ContinuousBumpModel& model, const ContextPair& contexts, const Vector& actions,
                                       SeparableCritic& critic, Index batch_size, RngStream& rng, Mode mode);
ObjectiveGradients objective_gradients(const DiscreteQuadraticModel& model, const ContextPair& contexts,
                                       const Matrix& logits, AnnealState anneal, SeparableCritic& critic,
                                       Index batch_size, RngStream& rng, Mode mode);

// Replaces the critic's batch-norm running statistics by averages of batch
// statistics over `batches` fresh prior batches under a fixed design, with
// the weights frozen. Momentum-based running statistics lag the final weights,
// and the lag is large enough to cost most of the bound in inference mode.
// No-op for critics without batch norm.
void recalibrate_batch_norm(const ContinuousBumpModel& model, const ContextPair& contexts, const Vector& design,
                            SeparableCritic& critic, Index batch_size, Index batches, RngStream rng);
void recalibrate_batch_norm(const DiscreteQuadraticModel& model, const ContextPair& contexts,
                            const std::vector<int>& design, SeparableCritic& critic, Index batch_size, Index batches,
                            RngStream rng);

struct BoundEstimate {
  double mean = 0.0;
  double se = 0.0;
  Index batches = 0;
  Index batch_size = 0;
};

// Held-out InfoNCE estimate in inference mode over fresh prior batches.
BoundEstimate evaluate_bound(const ContinuousBumpModel& model, const ContextPair& contexts, const Vector& design,
                             const SeparableCritic& critic, Index batch_size, Index batches, RngStream& rng);
BoundEstimate evaluate_bound(const DiscreteQuadraticModel& model, const ContextPair& contexts,
                             const std::vector<int>& design, const SeparableCritic& critic, Index batch_size,
                             Index batches, RngStream& rng);

}  // namespace mvbed
