// Bayesian simulators with the fixed graph context -> outcome <- action.
//
// Both models expose the same surface (see the SimulatorModel concept):
// prior sampling, mean rewards, per-parameter max-values and optimal
// actions, Gaussian log-likelihoods, and tape-aware outcome construction
// for the pathwise gradient.

#pragma once

#include "mvbed/autodiff.hpp"
#include "mvbed/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <numbers>
#include <vector>

namespace mvbed {

struct ContextPair {
  Vector experimental;  // C, length D
  Vector evaluation;    // C*, length D*
};

Vector linspace(double start, double stop, Index count);

// C = `count` points on [start, stop], C* = -C.
ContextPair negated_contexts(double start, double stop, Index count);
// C = `count` points on [start, stop], C* = the count-1 midpoints.
ContextPair midpoint_contexts(double start, double stop, Index count);

template <typename Design>
struct Dataset {
  Vector contexts;
  Design actions;
  Vector outcomes;
};

// Gaussian log-density of y under N(mean, variance).
template <typename Scalar>
Scalar gaussian_log_density(Scalar y, Scalar mean, Scalar variance) {
  using std::log;
  const Scalar d = y - mean;
  return Scalar(-0.5) * log(Scalar(2) * std::numbers::pi_v<Scalar> * variance) - d * d / (Scalar(2) * variance);
}

// Quadratic with leading coefficient -1 through (-3, low) and (3, high).
template <typename Scalar>
Scalar quadratic_reward(Scalar c, Scalar low, Scalar high) {
  const Scalar gamma = (low + high + Scalar(18)) / Scalar(2);
  const Scalar beta = (high - gamma + Scalar(9)) / Scalar(3);
  return -c * c + beta * c + gamma;
}

template <typename Scalar>
Scalar bump_reward(Scalar a, Scalar centre, Scalar width) {
  using std::exp;
  const Scalar d = a - centre;
  return exp(-d * d / width);
}

// Index of the largest entry; ties go to the lowest index.
template <typename Derived>
int argmax_lowest(const Eigen::DenseBase<Derived>& values) {
  int best = 0;
  for (Index k = 1; k < values.size(); ++k) {
    if (values(k) > values(best)) best = static_cast<int>(k);
  }
  return best;
}

class DiscreteQuadraticModel {
 public:
  using Action = int;  // 0-based treatment index
  using Design = std::vector<int>;

  static constexpr int kTreatments = 4;
  static constexpr int kParamDim = 2 * kTreatments;

  struct Options {
    std::array<std::array<double, 2>, kTreatments> prior_mean{{{5.0, 15.0}, {5.0, 15.0}, {-2.0, -1.0}, {-7.0, 3.0}}};
    std::array<double, kTreatments> prior_variance{9.0, 2.25, 1.21, 1.21};
    double noise_variance = 0.1;
  };

  DiscreteQuadraticModel() = default;
  explicit DiscreteQuadraticModel(Options options);

  const Options& options() const { return options_; }
  int param_dim() const { return kParamDim; }
  int treatments() const { return kTreatments; }
  double noise_std() const { return std::sqrt(options_.noise_variance); }

  // Rows are (psi_{1,1}, psi_{1,2}, psi_{2,1}, ..., psi_{4,2}).
  Matrix sample_prior(RngStream& rng, Index count) const;

  double mean_reward(const RowVector& psi, int treatment, double context) const;
  // [B, D] mean rewards of one treatment over a context vector.
  Matrix treatment_rewards(const Matrix& psi, int treatment, const Vector& contexts) const;
  // [B, D] mean rewards of a concrete design.
  Matrix design_rewards(const Matrix& psi, const Design& design, const Vector& contexts) const;

  double max_value(const RowVector& psi, double context) const;
  int argmax_action(const RowVector& psi, double context) const;
  Matrix max_values(const Matrix& psi, const Vector& contexts) const;

  Vector sample_outcomes(const RowVector& psi, const Design& design, const Vector& contexts, RngStream& rng) const;

  double log_likelihood(const RowVector& psi, const Dataset<Design>& data) const;
  Vector log_likelihood(const Matrix& particles, const Dataset<Design>& data) const;

  // Treatment with the highest posterior-mean reward at `context`.
  int estimate_action(const Matrix& posterior_draws, double context) const;
  // Hit indicator: 1 when the estimate equals the true optimum.
  double action_score(int estimate, int truth) const { return estimate == truth ? 1.0 : 0.0; }

  void check_design(const Design& design, Index expected_size) const;

 private:
  Options options_{};
};

class ContinuousBumpModel {
 public:
  using Action = double;
  using Design = Vector;

  static constexpr int kParamDim = 4;

  struct Options {
    double prior_low = 0.1;
    double prior_high = 1.1;
    double noise_std = 0.1;
    double action_low = -4.0;
    double action_high = 4.0;
  };

  ContinuousBumpModel() = default;
  explicit ContinuousBumpModel(Options options);

  const Options& options() const { return options_; }
  int param_dim() const { return kParamDim; }
  double noise_std() const { return options_.noise_std; }
  double clip(double a) const { return std::clamp(a, options_.action_low, options_.action_high); }

  Matrix sample_prior(RngStream& rng, Index count) const;

  // g(psi, c) = psi0 + psi1 c + psi2 c^2.
  static double centre(const RowVector& psi, double context) {
    return psi(0) + psi(1) * context + psi(2) * context * context;
  }
  // [B, D] centres.
  static Matrix centres(const Matrix& psi, const Vector& contexts);

  double mean_reward(const RowVector& psi, double action, double context) const;
  Matrix design_rewards(const Matrix& psi, const Design& design, const Vector& contexts) const;

  double max_value(const RowVector& psi, double context) const;
  double argmax_action(const RowVector& psi, double context) const;
  Matrix max_values(const Matrix& psi, const Vector& contexts) const;

  // Outcomes [B, D] on the tape for actions [1, D]; noise is [B, D] standard normal.
  ad::Var outcomes(ad::Tape& tape, const Matrix& psi, const ad::Var& actions, const Vector& contexts,
                   const Matrix& noise) const;

  Vector sample_outcomes(const RowVector& psi, const Design& design, const Vector& contexts, RngStream& rng) const;

  double log_likelihood(const RowVector& psi, const Dataset<Design>& data) const;
  Vector log_likelihood(const Matrix& particles, const Dataset<Design>& data) const;

  // Posterior average of the per-draw optimal action.
  double estimate_action(const Matrix& posterior_draws, double context) const;
  // Squared error between estimated and true optimal action.
  double action_score(double estimate, double truth) const { return (estimate - truth) * (estimate - truth); }

  void check_design(const Design& design, Index expected_size) const;

 private:
  Options options_{};
};

template <typename M>
concept SimulatorModel = requires(const M& m, RngStream& rng, const Matrix& psi, const RowVector& row,
                                  const typename M::Design& design, const Vector& contexts,
                                  const Dataset<typename M::Design>& data, typename M::Action action) {
  { m.param_dim() } -> std::convertible_to<int>;
  { m.sample_prior(rng, Index{1}) } -> std::same_as<Matrix>;
  { m.mean_reward(row, action, 0.0) } -> std::convertible_to<double>;
  { m.design_rewards(psi, design, contexts) } -> std::same_as<Matrix>;
  { m.max_value(row, 0.0) } -> std::convertible_to<double>;
  { m.argmax_action(row, 0.0) } -> std::convertible_to<typename M::Action>;
  { m.max_values(psi, contexts) } -> std::same_as<Matrix>;
  { m.sample_outcomes(row, design, contexts, rng) } -> std::same_as<Vector>;
  { m.log_likelihood(psi, data) } -> std::same_as<Vector>;
  { m.estimate_action(psi, 0.0) } -> std::convertible_to<typename M::Action>;
  { m.action_score(action, action) } -> std::convertible_to<double>;
};

static_assert(SimulatorModel<DiscreteQuadraticModel>);
static_assert(SimulatorModel<ContinuousBumpModel>);

}  // namespace mvbed
