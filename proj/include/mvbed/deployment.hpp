// Deployment stage: simulate the experiment in a ground-truth environment,
// fit a self-normalised importance-sampling posterior over prior particles,
// estimate max-values and optimal actions, and score them.

#pragma once

#include "mvbed/models.hpp"
#include "mvbed/random.hpp"
#include "mvbed/stats.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvbed {

class PosteriorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct WeightedPosterior {
  Matrix particles;    // [N, P] prior draws
  Vector log_weights;  // normalised: logsumexp = 0
  double ess = 0.0;    // 1 / sum w_i^2

  Vector weights() const { return log_weights.array().exp().matrix(); }
  RowVector mean() const;
  // Per-dimension weighted standard deviation.
  RowVector stddev() const;
};

// Normalises log-likelihoods into SNIS weights. Throws PosteriorError when
// every weight is zero or any log-likelihood is NaN.
WeightedPosterior weight_particles(Matrix particles, const Vector& log_likelihood);

template <typename Model>
WeightedPosterior snis_posterior(const Model& model, const Dataset<typename Model::Design>& data, Index particles,
                                 RngStream& rng) {
  if (particles < 2) throw std::invalid_argument("snis_posterior: need at least 2 particles");
  Matrix psi = model.sample_prior(rng, particles);
  Vector loglik = model.log_likelihood(psi, data);
  return weight_particles(std::move(psi), loglik);
}

template <typename Model>
struct PosteriorEstimates {
  Vector max_values;  // [D*]
  RowVector psi;      // [P]
  std::vector<typename Model::Action> actions;  // [D*]
};

template <SimulatorModel Model>
PosteriorEstimates<Model> posterior_estimates(const Model& model, const WeightedPosterior& posterior,
                                              const Vector& evaluation, Index draws, RngStream& rng) {
  if (draws < 1) throw std::invalid_argument("posterior_estimates: need at least one draw");
  std::vector<Index> idx = resample(rng, posterior.weights(), draws);
  Matrix sampled(draws, posterior.particles.cols());
  for (Index i = 0; i < draws; ++i) sampled.row(i) = posterior.particles.row(idx[static_cast<std::size_t>(i)]);

  PosteriorEstimates<Model> out;
  out.max_values = model.max_values(sampled, evaluation).colwise().mean().transpose();
  out.psi = sampled.colwise().mean();
  out.actions.reserve(static_cast<std::size_t>(evaluation.size()));
  for (Index j = 0; j < evaluation.size(); ++j) out.actions.push_back(model.estimate_action(sampled, evaluation(j)));
  return out;
}

struct RealisationMetrics {
  double mse_maxvalue = 0.0;
  double mse_psi = 0.0;
  double action_score = 0.0;  // MSE of optimal actions, or hit rate for discrete treatments
  double regret = 0.0;
  double posterior_std = 0.0;  // mean over dimensions of the posterior std
  double l2_error = 0.0;       // |psi_hat - psi_true|
  double ess = 0.0;
  bool failed = false;
  std::string failure;
};

template <SimulatorModel Model>
RealisationMetrics score_estimates(const Model& model, const RowVector& truth, const PosteriorEstimates<Model>& est,
                                   const Vector& evaluation) {
  RealisationMetrics m;
  const Index n = evaluation.size();
  double se_max = 0.0, score = 0.0, regret = 0.0;
  for (Index j = 0; j < n; ++j) {
    const double c = evaluation(j);
    const double true_max = model.max_value(truth, c);
    const double diff = est.max_values(j) - true_max;
    se_max += diff * diff;
    const auto estimate = est.actions[static_cast<std::size_t>(j)];
    score += model.action_score(estimate, model.argmax_action(truth, c));
    regret += true_max - model.mean_reward(truth, estimate, c);
  }
  const double dn = static_cast<double>(n);
  m.mse_maxvalue = se_max / dn;
  m.action_score = score / dn;
  m.regret = regret / dn;
  const RowVector err = est.psi - truth;
  m.mse_psi = err.squaredNorm() / static_cast<double>(err.size());
  m.l2_error = err.norm();
  return m;
}

struct DeployConfig {
  Index n_envs = 200;
  Index snis_particles = 10000;
  Index posterior_draws = 2000;
  unsigned workers = 1;
};

// Runs fn(i) for i in [0, n) on up to `workers` threads.
void parallel_for(Index n, unsigned workers, const std::function<void(Index)>& fn);

// One ground-truth realisation. The environment stream is derived from the
// realisation index, so results do not depend on scheduling.
template <SimulatorModel Model>
RealisationMetrics run_realisation(const Model& model, const ContextPair& contexts, const typename Model::Design& design,
                                   const DeployConfig& cfg, const RngStream& rng, Index index) {
  RngStream env = rng.split("env-" + std::to_string(index));
  RngStream truth_rng = env.split("truth");
  RngStream outcome_rng = env.split("outcomes");
  RngStream snis_rng = env.split("snis");
  RngStream draw_rng = env.split("draws");

  const RowVector truth = model.sample_prior(truth_rng, 1).row(0);
  Dataset<typename Model::Design> data{contexts.experimental, design,
                                       model.sample_outcomes(truth, design, contexts.experimental, outcome_rng)};
  RealisationMetrics m;
  try {
    WeightedPosterior post = snis_posterior(model, data, cfg.snis_particles, snis_rng);
    auto est = posterior_estimates(model, post, contexts.evaluation, cfg.posterior_draws, draw_rng);
    m = score_estimates(model, truth, est, contexts.evaluation);
    m.ess = post.ess;
    m.posterior_std = post.stddev().mean();
  } catch (const PosteriorError& e) {
    m = RealisationMetrics{};
    m.failed = true;
    m.failure = e.what();
  }
  return m;
}

template <SimulatorModel Model>
std::vector<RealisationMetrics> run_realisations(const Model& model, const ContextPair& contexts,
                                                 const typename Model::Design& design, const DeployConfig& cfg,
                                                 const RngStream& rng) {
  if (cfg.n_envs < 1) throw std::invalid_argument("deployment: n_envs must be >= 1");
  model.check_design(design, contexts.experimental.size());
  std::vector<RealisationMetrics> out(static_cast<std::size_t>(cfg.n_envs));
  parallel_for(cfg.n_envs, cfg.workers, [&](Index i) {
    out[static_cast<std::size_t>(i)] = run_realisation(model, contexts, design, cfg, rng, i);
  });
  return out;
}

struct MetricSummary {
  MeanSe mse_maxvalue;
  MeanSe mse_psi;
  MeanSe action_score;
  MeanSe regret;
  MeanSe ess;
  Index n_envs = 0;
  Index failures = 0;
};

// Aggregates successful realisations; failures are counted, not fatal.
MetricSummary summarise(const std::vector<RealisationMetrics>& realisations);

template <SimulatorModel Model>
MetricSummary run_deployment(const Model& model, const ContextPair& contexts, const typename Model::Design& design,
                             const DeployConfig& cfg, const RngStream& rng) {
  return summarise(run_realisations(model, contexts, design, cfg, rng));
}

struct CalibrationSeries {
  std::vector<double> posterior_std;
  std::vector<double> l2_error;
  std::vector<double> rolling_error;  // trailing mean over `window` points
  std::size_t window = 200;
};

CalibrationSeries calibration_series(const std::vector<RealisationMetrics>& realisations, std::size_t window = 200);

template <SimulatorModel Model>
CalibrationSeries calibration_diagnostic(const Model& model, const ContextPair& contexts,
                                         const typename Model::Design& design, const DeployConfig& cfg,
                                         const RngStream& rng) {
  return calibration_series(run_realisations(model, contexts, design, cfg, rng));
}

std::string calibration_csv(const CalibrationSeries& series);

}  // namespace mvbed
