#include "mvbed/trainer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mvbed {

void TrainConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("trainer: steps must be >= 0");
  if (batch_size < 2) throw std::invalid_argument("trainer: batch size must be >= 2");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("trainer: learning rate must be positive");
  if (!(lr_decay > 0.0) || lr_decay_interval < 1) throw std::invalid_argument("trainer: invalid learning-rate decay");
  if (!(initial_temperature > 0.0) || !(temperature_decay > 0.0) || temperature_interval < 1) {
    throw std::invalid_argument("trainer: invalid temperature schedule");
  }
  if (hard_fraction < 0.0 || hard_fraction > 1.0) throw std::invalid_argument("trainer: hard fraction must lie in [0, 1]");
  if (log_interval < 1) throw std::invalid_argument("trainer: log interval must be >= 1");
  if (bn_calibration_batches < 0) throw std::invalid_argument("trainer: bn calibration batches must be >= 0");
}

AnnealState anneal_schedule(long step, const TrainConfig& cfg) {
  const double tau = cfg.initial_temperature * std::pow(cfg.temperature_decay, static_cast<double>(step / cfg.temperature_interval));
  const bool hard = static_cast<double>(step) >= (1.0 - cfg.hard_fraction) * static_cast<double>(cfg.steps);
  return {tau, hard};
}

ad::Var gumbel_softmax_relax(const ad::Var& logits, double temperature, const Matrix& gumbel, bool hard) {
  if (!(temperature > 0.0)) throw std::invalid_argument("gumbel_softmax: temperature must be positive");
  if (gumbel.rows() != logits.rows() || gumbel.cols() != logits.cols()) {
    throw ShapeError("gumbel_softmax: noise " + shape_string(gumbel.rows(), gumbel.cols()) + " vs logits " +
                     shape_string(logits.rows(), logits.cols()));
  }
  ad::Tape& tape = *logits.tape();
  ad::Var soft = ad::softmax((logits + tape.constant(gumbel)) * (1.0 / temperature), ad::Axis::Cols);
  if (!hard) return soft;
  const Matrix& p = soft.value();
  Matrix one_hot = Matrix::Zero(p.rows(), p.cols());
  for (Index d = 0; d < p.rows(); ++d) one_hot(d, argmax_lowest(p.row(d))) = 1.0;
  return ad::straight_through(soft, std::move(one_hot));
}

ad::Var gumbel_softmax_relax(const ad::Var& logits, double temperature, RngStream& rng, bool hard) {
  return gumbel_softmax_relax(logits, temperature, sample(rng, Gumbel01{}, logits.rows(), logits.cols()), hard);
}

ad::Var relaxed_outcomes(const DiscreteQuadraticModel& model, const Matrix& psi, const ad::Var& policy,
                         const Vector& contexts, const Matrix& noise) {
  const Index d = contexts.size();
  if (policy.rows() != d || policy.cols() != model.treatments()) {
    throw ShapeError("relaxed_outcomes: policy " + shape_string(policy.rows(), policy.cols()) + " expected " +
                     shape_string(d, model.treatments()));
  }
  ad::Tape& tape = *policy.tape();
  ad::Var by_treatment = ad::transpose(policy);  // [K, D]
  ad::Var mean;
  for (int k = 0; k < model.treatments(); ++k) {
    ad::Var weight = ad::gather_rows(by_treatment, {k});  // [1, D]
    ad::Var term = weight * tape.constant(model.treatment_rewards(psi, k, contexts));
    mean = k == 0 ? term : mean + term;
  }
  return mean + tape.constant(noise) * model.noise_std();
}

ContinuousDesign initial_design(const ContinuousBumpModel& model, Index count, RngStream& rng) {
  Matrix draws = sample(rng, StandardNormal{}, 1, count);
  Vector a(count);
  for (Index i = 0; i < count; ++i) a(i) = model.clip(draws(0, i));
  return {a};
}

DiscretePolicy initial_policy(const DiscreteQuadraticModel& model, Index count, const TrainConfig& cfg) {
  return {Matrix::Zero(count, model.treatments()), cfg.initial_temperature, false};
}

Vector extract_design(const ContinuousBumpModel& model, const ContinuousDesign& spec) {
  Vector a = spec.actions;
  for (Index i = 0; i < a.size(); ++i) a(i) = model.clip(a(i));
  return a;
}

std::vector<int> extract_design(const DiscreteQuadraticModel& model, const DiscretePolicy& spec) {
  if (spec.logits.cols() != model.treatments()) throw ShapeError("extract_design: policy has the wrong number of treatments");
  std::vector<int> out(static_cast<std::size_t>(spec.logits.rows()));
  for (Index d = 0; d < spec.logits.rows(); ++d) out[static_cast<std::size_t>(d)] = argmax_lowest(spec.logits.row(d));
  return out;
}

namespace {

struct Batch {
  Matrix psi;
  Matrix maxvalues;
  Matrix noise;
};

template <typename Model>
Batch draw_batch(const Model& model, const ContextPair& contexts, Index batch_size, RngStream& rng) {
  Batch b;
  b.psi = model.sample_prior(rng, batch_size);
  b.maxvalues = model.max_values(b.psi, contexts.evaluation);
  b.noise = sample(rng, StandardNormal{}, batch_size, contexts.experimental.size());
  return b;
}

ObjectiveGradients finish(ad::Tape& tape, SeparableCritic& critic, const std::vector<ad::Var>& bound_params,
                          const ad::Var& y, const Matrix& maxvalues, Mode mode, const ad::Var* design) {
  ad::Var s = critic.scores(bound_params, y, tape.constant(maxvalues), mode);
  ad::Var bound = infonce(s);
  ad::Gradients grads = tape.backward(bound);
  ObjectiveGradients out;
  out.bound = bound.scalar();
  if (design != nullptr) {
    out.design_gradient = grads.has(*design) ? grads[*design] : Matrix::Zero(design->rows(), design->cols());
  }
  out.critic_gradients.reserve(bound_params.size());
  for (const ad::Var& p : bound_params) {
    out.critic_gradients.push_back(grads.has(p) ? grads[p] : Matrix::Zero(p.rows(), p.cols()));
  }
  return out;
}

ObjectiveGradients fixed_design_gradients(const Matrix& rewards_plus_noise, const Matrix& maxvalues,
                                          SeparableCritic& critic, Mode mode) {
  ad::Tape tape;
  auto bound_params = critic.bind(tape, true);
  ad::Var y = tape.constant(rewards_plus_noise);
  return finish(tape, critic, bound_params, y, maxvalues, mode, nullptr);
}

// Shared ascent loop. `step_fn(step, anneal)` returns the objective and its
// gradients; `design` is null for critic-only training.
template <typename StepFn, typename Project>
TrainLog ascend(const TrainConfig& cfg, SeparableCritic& critic, Parameter* design, StepFn step_fn, Project project) {
  cfg.validate();
  AdamOptions opts;
  opts.learning_rate = cfg.learning_rate;
  opts.decay = cfg.lr_decay;
  opts.decay_interval = cfg.lr_decay_interval;
  AdamState adam(opts);

  std::vector<Parameter*> params;
  if (design != nullptr) params.push_back(design);
  for (Parameter* p : critic.parameter_ptrs()) params.push_back(p);

  TrainLog log;
  double interval_sum = 0.0;
  long interval_count = 0;
  for (long step = 0; step < cfg.steps; ++step) {
    const AnnealState anneal = anneal_schedule(step, cfg);
    ObjectiveGradients og = step_fn(step, anneal);
    if (!std::isfinite(og.bound)) {
      throw NumericalError("training diverged: non-finite bound at step " + std::to_string(step));
    }

    std::vector<Matrix> grads;
    grads.reserve(params.size());
    if (design != nullptr) grads.push_back(-og.design_gradient);
    for (Matrix& g : og.critic_gradients) grads.push_back(-g);
    const double lr = adam.effective_lr(adam.step);
    adam_step(params, grads, adam);
    project();

    interval_sum += og.bound;
    ++interval_count;
    if ((step + 1) % cfg.log_interval == 0 || step + 1 == cfg.steps) {
      const double mean_bound = interval_sum / static_cast<double>(interval_count);
      log.records.push_back({step + 1, -mean_bound, mean_bound, lr, anneal.temperature, anneal.hard});
      interval_sum = 0.0;
      interval_count = 0;
    }
  }
  return log;
}

}  // namespace

ObjectiveGradients objective_gradients(const ContinuousBumpModel& model, const ContextPair& contexts, const Vector& actions,
                                       SeparableCritic& critic, Index batch_size, RngStream& rng, Mode mode) {
  Batch b = draw_batch(model, contexts, batch_size, rng);
  ad::Tape tape;
  auto bound_params = critic.bind(tape, true);
  ad::Var a = tape.leaf(actions.transpose(), true);
  ad::Var y = model.outcomes(tape, b.psi, a, contexts.experimental, b.noise);
  ObjectiveGradients out = finish(tape, critic, bound_params, y, b.maxvalues, mode, &a);
  out.design_gradient.transposeInPlace();
  return out;
}

ObjectiveGradients objective_gradients(const DiscreteQuadraticModel& model, const ContextPair& contexts,
                                       const Matrix& logits, AnnealState anneal, SeparableCritic& critic,
                                       Index batch_size, RngStream& rng, Mode mode) {
  // One Gumbel draw per design, shared across the prior batch.
  Matrix gumbel = sample(rng, Gumbel01{}, logits.rows(), logits.cols());
  Batch b = draw_batch(model, contexts, batch_size, rng);
  ad::Tape tape;
  auto bound_params = critic.bind(tape, true);
  ad::Var alpha = tape.leaf(logits, true);
  ad::Var policy = gumbel_softmax_relax(alpha, anneal.temperature, gumbel, anneal.hard);
  ad::Var y = relaxed_outcomes(model, b.psi, policy, contexts.experimental, b.noise);
  return finish(tape, critic, bound_params, y, b.maxvalues, mode, &alpha);
}

TrainResult train_designs(const ContinuousBumpModel& model, const ContextPair& contexts, ContinuousDesign init,
                          SeparableCritic critic, const TrainConfig& cfg, RngStream& rng) {
  if (init.actions.size() != contexts.experimental.size()) {
    throw ShapeError("train_designs: " + std::to_string(init.actions.size()) + " actions for " +
                     std::to_string(contexts.experimental.size()) + " contexts");
  }
  Parameter design{"design.actions", init.actions};
  auto project = [&] {
    for (Index i = 0; i < design.value.size(); ++i) design.value(i, 0) = model.clip(design.value(i, 0));
  };
  project();
  auto step_fn = [&](long, AnnealState) {
    return objective_gradients(model, contexts, design.value.col(0), critic, cfg.batch_size, rng, Mode::Train);
  };
  TrainLog log = ascend(cfg, critic, &design, step_fn, project);
  ContinuousDesign trained{design.value.col(0)};
  recalibrate_batch_norm(model, contexts, extract_design(model, trained), critic, cfg.batch_size,
                         cfg.bn_calibration_batches, rng.split("bn-calibration"));
  return {std::move(trained), std::move(critic), std::move(log)};
}

TrainResult train_designs(const DiscreteQuadraticModel& model, const ContextPair& contexts, DiscretePolicy init,
                          SeparableCritic critic, const TrainConfig& cfg, RngStream& rng) {
  if (init.logits.rows() != contexts.experimental.size() || init.logits.cols() != model.treatments()) {
    throw ShapeError("train_designs: policy logits " + shape_string(init.logits.rows(), init.logits.cols()) +
                     " expected " + shape_string(contexts.experimental.size(), model.treatments()));
  }
  Parameter design{"design.logits", init.logits};
  AnnealState last{init.temperature, init.hard};
  auto step_fn = [&](long, AnnealState anneal) {
    last = anneal;
    return objective_gradients(model, contexts, design.value, anneal, critic, cfg.batch_size, rng, Mode::Train);
  };
  TrainLog log = ascend(cfg, critic, &design, step_fn, [] {});
  DiscretePolicy policy{design.value, last.temperature, last.hard};
  recalibrate_batch_norm(model, contexts, extract_design(model, policy), critic, cfg.batch_size,
                         cfg.bn_calibration_batches, rng.split("bn-calibration"));
  return {std::move(policy), std::move(critic), std::move(log)};
}

TrainResult train_critic(const ContinuousBumpModel& model, const ContextPair& contexts, const Vector& design,
                         SeparableCritic critic, const TrainConfig& cfg, RngStream& rng) {
  model.check_design(design, contexts.experimental.size());
  auto step_fn = [&](long, AnnealState) {
    Batch b = draw_batch(model, contexts, cfg.batch_size, rng);
    Matrix y = model.design_rewards(b.psi, design, contexts.experimental) + model.noise_std() * b.noise;
    return fixed_design_gradients(y, b.maxvalues, critic, Mode::Train);
  };
  TrainLog log = ascend(cfg, critic, nullptr, step_fn, [] {});
  recalibrate_batch_norm(model, contexts, design, critic, cfg.batch_size, cfg.bn_calibration_batches,
                         rng.split("bn-calibration"));
  return {ContinuousDesign{design}, std::move(critic), std::move(log)};
}

TrainResult train_critic(const DiscreteQuadraticModel& model, const ContextPair& contexts, const std::vector<int>& design,
                         SeparableCritic critic, const TrainConfig& cfg, RngStream& rng) {
  model.check_design(design, contexts.experimental.size());
  auto step_fn = [&](long, AnnealState) {
    Batch b = draw_batch(model, contexts, cfg.batch_size, rng);
    Matrix y = model.design_rewards(b.psi, design, contexts.experimental) + model.noise_std() * b.noise;
    return fixed_design_gradients(y, b.maxvalues, critic, Mode::Train);
  };
  TrainLog log = ascend(cfg, critic, nullptr, step_fn, [] {});
  recalibrate_batch_norm(model, contexts, design, critic, cfg.batch_size, cfg.bn_calibration_batches,
                         rng.split("bn-calibration"));
  Matrix logits = Matrix::Zero(static_cast<Index>(design.size()), model.treatments());
  for (std::size_t d = 0; d < design.size(); ++d) logits(static_cast<Index>(d), design[d]) = 1.0;
  return {DiscretePolicy{logits, cfg.initial_temperature, true}, std::move(critic), std::move(log)};
}

namespace {

template <typename Model, typename Design>
void recalibrate(const Model& model, const ContextPair& contexts, const Design& design, SeparableCritic& critic,
                 Index batch_size, Index batches, RngStream& rng) {
  Encoder& ey = critic.outcome_encoder();
  Encoder& em = critic.maxvalue_encoder();
  if ((!ey.batch_norm && !em.batch_norm) || batches < 1) return;
  model.check_design(design, contexts.experimental.size());
  const double momentum_y = ey.bn_stats.momentum, momentum_m = em.bn_stats.momentum;
  for (Index k = 0; k < batches; ++k) {
    // Momentum 1/(k+1) turns the running update into a cumulative mean.
    ey.bn_stats.momentum = em.bn_stats.momentum = 1.0 / static_cast<double>(k + 1);
    Batch b = draw_batch(model, contexts, batch_size, rng);
    Matrix y = model.design_rewards(b.psi, design, contexts.experimental) + model.noise_std() * b.noise;
    ad::Tape tape;
    auto bound = critic.bind(tape, false);
    critic.scores(bound, tape.constant(y), tape.constant(b.maxvalues), Mode::Train);
  }
  ey.bn_stats.momentum = momentum_y;
  em.bn_stats.momentum = momentum_m;
}

template <typename Model, typename Design>
BoundEstimate evaluate_fixed(const Model& model, const ContextPair& contexts, const Design& design,
                             const SeparableCritic& critic, Index batch_size, Index batches, RngStream& rng) {
  if (batches < 1) throw std::invalid_argument("evaluate_bound: need at least one batch");
  model.check_design(design, contexts.experimental.size());
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(batches));
  for (Index i = 0; i < batches; ++i) {
    Batch b = draw_batch(model, contexts, batch_size, rng);
    Matrix y = model.design_rewards(b.psi, design, contexts.experimental) + model.noise_std() * b.noise;
    values.push_back(infonce_value(critic.score_matrix(y, b.maxvalues)));
  }
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double n = static_cast<double>(values.size());
  const double se = values.size() > 1 ? std::sqrt(var / (n - 1.0) / n) : 0.0;
  return {mean, se, batches, batch_size};
}

}  // namespace

void recalibrate_batch_norm(const ContinuousBumpModel& model, const ContextPair& contexts, const Vector& design,
                            SeparableCritic& critic, Index batch_size, Index batches, RngStream rng) {
  recalibrate(model, contexts, design, critic, batch_size, batches, rng);
}

void recalibrate_batch_norm(const DiscreteQuadraticModel& model, const ContextPair& contexts,
                            const std::vector<int>& design, SeparableCritic& critic, Index batch_size, Index batches,
                            RngStream rng) {
  recalibrate(model, contexts, design, critic, batch_size, batches, rng);
}

BoundEstimate evaluate_bound(const ContinuousBumpModel& model, const ContextPair& contexts, const Vector& design,
                             const SeparableCritic& critic, Index batch_size, Index batches, RngStream& rng) {
  return evaluate_fixed(model, contexts, design, critic, batch_size, batches, rng);
}

BoundEstimate evaluate_bound(const DiscreteQuadraticModel& model, const ContextPair& contexts,
                             const std::vector<int>& design, const SeparableCritic& critic, Index batch_size,
                             Index batches, RngStream& rng) {
  return evaluate_fixed(model, contexts, design, critic, batch_size, batches, rng);
}

}  // namespace mvbed
