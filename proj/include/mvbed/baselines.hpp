// Non-adaptive comparison designs (random assignment, prior UCB) and EIG
// estimation for fixed designs by training a fresh critic.

#pragma once

#include "mvbed/critic.hpp"
#include "mvbed/models.hpp"
#include "mvbed/trainer.hpp"

#include <string>
#include <vector>

namespace mvbed {

struct BaselineSpec {
  enum class Kind { Random, Ucb };
  Kind kind = Kind::Random;
  // Random: stddev of the normal draws (continuous only). Ucb: lambda.
  double parameter = 1.0;
  Index mc_samples = 512;
  Index grid_points = 201;

  // Accepts "random", "random:<stddev>", "ucb:<lambda>".
  static BaselineSpec parse(const std::string& method);
  std::string name() const;
};

std::vector<int> random_designs(const DiscreteQuadraticModel& model, Index count, RngStream& rng);
// Normal(0, stddev) draws clipped to the action bounds.
Vector random_designs(const ContinuousBumpModel& model, Index count, double stddev, RngStream& rng);

// Per context, the action maximising prior mean + lambda * prior std of the
// mean reward, estimated from spec.mc_samples prior draws.
std::vector<int> ucb_designs(const DiscreteQuadraticModel& model, const Vector& contexts, double lambda,
                             const BaselineSpec& spec, RngStream& rng);
Vector ucb_designs(const ContinuousBumpModel& model, const Vector& contexts, double lambda, const BaselineSpec& spec,
                   RngStream& rng);

// Prior UCB scores [K] of the discrete model at one context.
Vector ucb_scores(const DiscreteQuadraticModel& model, const Matrix& prior_draws, double context, double lambda);

struct EigResult {
  BoundEstimate estimate;
  SeparableCritic critic;
  TrainLog log;
};

EigResult eig_of_fixed_designs(const ContinuousBumpModel& model, const ContextPair& contexts, const Vector& design,
                               const TrainConfig& cfg, Index eval_batches, RngStream& rng);
EigResult eig_of_fixed_designs(const DiscreteQuadraticModel& model, const ContextPair& contexts,
                               const std::vector<int>& design, const TrainConfig& cfg, Index eval_batches,
                               RngStream& rng);

}  // namespace mvbed
