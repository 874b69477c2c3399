#include "mvbed/baselines.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mvbed {

BaselineSpec BaselineSpec::parse(const std::string& method) {
  BaselineSpec spec;
  const auto colon = method.find(':');
  const std::string head = method.substr(0, colon);
  if (head == "random") {
    spec.kind = Kind::Random;
  } else if (head == "ucb") {
    spec.kind = Kind::Ucb;
    if (colon == std::string::npos) throw std::invalid_argument("baseline 'ucb' needs a lambda, e.g. ucb:1");
  } else {
    throw std::invalid_argument("unknown baseline method '" + method + "'");
  }
  if (colon != std::string::npos) {
    const std::string tail = method.substr(colon + 1);
    std::size_t used = 0;
    try {
      spec.parameter = std::stod(tail, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("baseline '" + method + "': cannot parse parameter '" + tail + "'");
    }
    if (used != tail.size()) throw std::invalid_argument("baseline '" + method + "': trailing characters");
  }
  if (spec.kind == Kind::Random && !(spec.parameter > 0.0)) {
    throw std::invalid_argument("baseline '" + method + "': random stddev must be positive");
  }
  if (spec.kind == Kind::Ucb && spec.parameter < 0.0) {
    throw std::invalid_argument("baseline '" + method + "': lambda must be non-negative");
  }
  return spec;
}

std::string BaselineSpec::name() const {
  std::ostringstream os;
  os << (kind == Kind::Random ? "random" : "ucb") << ":" << parameter;
  return os.str();
}

std::vector<int> random_designs(const DiscreteQuadraticModel& model, Index count, RngStream& rng) {
  std::vector<int> out(static_cast<std::size_t>(count));
  for (int& a : out) a = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(model.treatments())));
  return out;
}

Vector random_designs(const ContinuousBumpModel& model, Index count, double stddev, RngStream& rng) {
  Matrix draws = sample(rng, Normal{0.0, stddev}, 1, count);
  Vector out(count);
  for (Index i = 0; i < count; ++i) out(i) = model.clip(draws(0, i));
  return out;
}

namespace {

// Unbiased sample standard deviation of each column.
RowVector column_std(const Matrix& x) {
  RowVector mu = x.colwise().mean();
  const double n = static_cast<double>(x.rows());
  return ((x.rowwise() - mu).array().square().colwise().sum() / (n - 1.0)).sqrt().matrix();
}

void check_mc(const BaselineSpec& spec) {
  if (spec.mc_samples < 2) throw std::invalid_argument("ucb: need at least 2 prior samples");
}

}  // namespace

Vector ucb_scores(const DiscreteQuadraticModel& model, const Matrix& prior_draws, double context, double lambda) {
  Vector c = Vector::Constant(1, context);
  Vector out(model.treatments());
  for (int k = 0; k < model.treatments(); ++k) {
    Matrix r = model.treatment_rewards(prior_draws, k, c);
    out(k) = r.mean() + lambda * column_std(r)(0);
  }
  return out;
}

std::vector<int> ucb_designs(const DiscreteQuadraticModel& model, const Vector& contexts, double lambda,
                             const BaselineSpec& spec, RngStream& rng) {
  check_mc(spec);
  Matrix draws = model.sample_prior(rng, spec.mc_samples);
  std::vector<int> out(static_cast<std::size_t>(contexts.size()));
  for (Index d = 0; d < contexts.size(); ++d) {
    out[static_cast<std::size_t>(d)] = argmax_lowest(ucb_scores(model, draws, contexts(d), lambda));
  }
  return out;
}

Vector ucb_designs(const ContinuousBumpModel& model, const Vector& contexts, double lambda, const BaselineSpec& spec,
                   RngStream& rng) {
  check_mc(spec);
  if (spec.grid_points < 2) throw std::invalid_argument("ucb: action grid needs at least 2 points");
  Matrix draws = model.sample_prior(rng, spec.mc_samples);
  const Vector grid = linspace(model.options().action_low, model.options().action_high, spec.grid_points);
  Vector out(contexts.size());
  for (Index d = 0; d < contexts.size(); ++d) {
    Vector c = Vector::Constant(1, contexts(d));
    Matrix g = ContinuousBumpModel::centres(draws, c);  // [N, 1]
    // rewards[n, j] for grid action j
    Matrix diff = (-(g.replicate(1, grid.size()).rowwise() - grid.transpose())).eval();
    Matrix rewards = (-(diff.array().square().colwise() / draws.col(3).array())).exp().matrix();
    RowVector score = rewards.colwise().mean() + lambda * column_std(rewards);
    out(d) = grid(argmax_lowest(score));
  }
  return out;
}

EigResult eig_of_fixed_designs(const ContinuousBumpModel& model, const ContextPair& contexts, const Vector& design,
                               const TrainConfig& cfg, Index eval_batches, RngStream& rng) {
  RngStream init = rng.split("critic");
  SeparableCritic critic(CriticPreset::Continuous, contexts.experimental.size(), contexts.evaluation.size(), init);
  RngStream train_rng = rng.split("train");
  TrainResult trained = train_critic(model, contexts, design, std::move(critic), cfg, train_rng);
  RngStream eval_rng = rng.split("eval");
  BoundEstimate est = evaluate_bound(model, contexts, design, trained.critic, cfg.batch_size, eval_batches, eval_rng);
  return {est, std::move(trained.critic), std::move(trained.log)};
}

EigResult eig_of_fixed_designs(const DiscreteQuadraticModel& model, const ContextPair& contexts,
                               const std::vector<int>& design, const TrainConfig& cfg, Index eval_batches,
                               RngStream& rng) {
  RngStream init = rng.split("critic");
  SeparableCritic critic(CriticPreset::Discrete, contexts.experimental.size(), contexts.evaluation.size(), init);
  RngStream train_rng = rng.split("train");
  TrainResult trained = train_critic(model, contexts, design, std::move(critic), cfg, train_rng);
  RngStream eval_rng = rng.split("eval");
  BoundEstimate est = evaluate_bound(model, contexts, design, trained.critic, cfg.batch_size, eval_batches, eval_rng);
  return {est, std::move(trained.critic), std::move(trained.log)};
}

}  // namespace mvbed
