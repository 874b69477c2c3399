#include "mvbed/models.hpp"

#include <stdexcept>
#include <string>

namespace mvbed {

Vector linspace(double start, double stop, Index count) {
  if (count < 1) throw std::invalid_argument("linspace: count must be >= 1");
  if (count == 1) return Vector::Constant(1, start);
  return Vector::LinSpaced(count, start, stop);
}

ContextPair negated_contexts(double start, double stop, Index count) {
  Vector c = linspace(start, stop, count);
  return {c, -c};
}

ContextPair midpoint_contexts(double start, double stop, Index count) {
  if (count < 2) throw std::invalid_argument("midpoint_contexts: need at least 2 experimental contexts");
  Vector c = linspace(start, stop, count);
  Vector mid = 0.5 * (c.head(count - 1) + c.tail(count - 1));
  return {c, mid};
}

// ---------------------------------------------------------------------------
// DiscreteQuadraticModel

DiscreteQuadraticModel::DiscreteQuadraticModel(Options options) : options_(options) {
  if (!(options_.noise_variance > 0.0)) throw std::invalid_argument("discrete model: noise variance must be positive");
  for (double v : options_.prior_variance) {
    if (!(v > 0.0)) throw std::invalid_argument("discrete model: prior variances must be positive");
  }
}

Matrix DiscreteQuadraticModel::sample_prior(RngStream& rng, Index count) const {
  Matrix psi = sample(rng, StandardNormal{}, count, kParamDim);
  for (int k = 0; k < kTreatments; ++k) {
    double sd = std::sqrt(options_.prior_variance[static_cast<std::size_t>(k)]);
    for (int j = 0; j < 2; ++j) {
      psi.col(2 * k + j) = (psi.col(2 * k + j).array() * sd + options_.prior_mean[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)]).matrix();
    }
  }
  return psi;
}

double DiscreteQuadraticModel::mean_reward(const RowVector& psi, int treatment, double context) const {
  if (treatment < 0 || treatment >= kTreatments) {
    throw DomainError("discrete model: treatment index " + std::to_string(treatment) + " outside [0, " +
                      std::to_string(kTreatments) + ")");
  }
  return quadratic_reward(context, psi(2 * treatment), psi(2 * treatment + 1));
}

Matrix DiscreteQuadraticModel::treatment_rewards(const Matrix& psi, int treatment, const Vector& contexts) const {
  if (treatment < 0 || treatment >= kTreatments) throw DomainError("discrete model: treatment index out of range");
  const Index b = psi.rows();
  Matrix out(b, contexts.size());
  for (Index d = 0; d < contexts.size(); ++d) {
    const double c = contexts(d);
    for (Index i = 0; i < b; ++i) out(i, d) = quadratic_reward(c, psi(i, 2 * treatment), psi(i, 2 * treatment + 1));
  }
  return out;
}

void DiscreteQuadraticModel::check_design(const Design& design, Index expected_size) const {
  if (static_cast<Index>(design.size()) != expected_size) {
    throw ShapeError("discrete design has " + std::to_string(design.size()) + " entries, expected " +
                     std::to_string(expected_size));
  }
  for (int a : design) {
    if (a < 0 || a >= kTreatments) throw DomainError("discrete design: treatment index " + std::to_string(a) + " out of range");
  }
}

Matrix DiscreteQuadraticModel::design_rewards(const Matrix& psi, const Design& design, const Vector& contexts) const {
  check_design(design, contexts.size());
  Matrix out(psi.rows(), contexts.size());
  for (Index d = 0; d < contexts.size(); ++d) {
    const int k = design[static_cast<std::size_t>(d)];
    for (Index i = 0; i < psi.rows(); ++i) out(i, d) = quadratic_reward(contexts(d), psi(i, 2 * k), psi(i, 2 * k + 1));
  }
  return out;
}

double DiscreteQuadraticModel::max_value(const RowVector& psi, double context) const {
  return mean_reward(psi, argmax_action(psi, context), context);
}

int DiscreteQuadraticModel::argmax_action(const RowVector& psi, double context) const {
  Eigen::Matrix<double, kTreatments, 1> values;
  for (int k = 0; k < kTreatments; ++k) values(k) = quadratic_reward(context, psi(2 * k), psi(2 * k + 1));
  return argmax_lowest(values);
}

Matrix DiscreteQuadraticModel::max_values(const Matrix& psi, const Vector& contexts) const {
  Matrix out = treatment_rewards(psi, 0, contexts);
  for (int k = 1; k < kTreatments; ++k) out = out.cwiseMax(treatment_rewards(psi, k, contexts));
  return out;
}

Vector DiscreteQuadraticModel::sample_outcomes(const RowVector& psi, const Design& design, const Vector& contexts,
                                               RngStream& rng) const {
  Matrix mean = design_rewards(psi, design, contexts);
  Matrix noise = sample(rng, StandardNormal{}, 1, contexts.size());
  return (mean + noise_std() * noise).row(0).transpose();
}

double DiscreteQuadraticModel::log_likelihood(const RowVector& psi, const Dataset<Design>& data) const {
  Matrix one = psi;
  return log_likelihood(one, data)(0);
}

Vector DiscreteQuadraticModel::log_likelihood(const Matrix& particles, const Dataset<Design>& data) const {
  const Index d = data.contexts.size();
  if (static_cast<Index>(data.actions.size()) != d || data.outcomes.size() != d) {
    throw ShapeError("log_likelihood: dataset fields have inconsistent lengths");
  }
  Vector out = Vector::Zero(particles.rows());
  if (d == 0) return out;
  Matrix mean = design_rewards(particles, data.actions, data.contexts);
  const double var = options_.noise_variance;
  const double norm = -0.5 * std::log(2.0 * std::numbers::pi * var);
  for (Index j = 0; j < d; ++j) {
    out.array() += norm - (mean.col(j).array() - data.outcomes(j)).square() / (2.0 * var);
  }
  return out;
}

int DiscreteQuadraticModel::estimate_action(const Matrix& posterior_draws, double context) const {
  Eigen::Matrix<double, kTreatments, 1> values;
  Vector c = Vector::Constant(1, context);
  for (int k = 0; k < kTreatments; ++k) values(k) = treatment_rewards(posterior_draws, k, c).mean();
  return argmax_lowest(values);
}

// ---------------------------------------------------------------------------
// ContinuousBumpModel

ContinuousBumpModel::ContinuousBumpModel(Options options) : options_(options) {
  if (!(options_.prior_high > options_.prior_low) || !(options_.prior_low > 0.0)) {
    throw std::invalid_argument("bump model: prior must be a positive interval");
  }
  if (!(options_.noise_std > 0.0)) throw std::invalid_argument("bump model: noise std must be positive");
  if (!(options_.action_high > options_.action_low)) throw std::invalid_argument("bump model: empty action bounds");
}

Matrix ContinuousBumpModel::sample_prior(RngStream& rng, Index count) const {
  return sample(rng, Uniform{options_.prior_low, options_.prior_high}, count, kParamDim);
}

Matrix ContinuousBumpModel::centres(const Matrix& psi, const Vector& contexts) {
  Matrix out(psi.rows(), contexts.size());
  for (Index d = 0; d < contexts.size(); ++d) {
    const double c = contexts(d);
    out.col(d) = psi.col(0) + psi.col(1) * c + psi.col(2) * (c * c);
  }
  return out;
}

double ContinuousBumpModel::mean_reward(const RowVector& psi, double action, double context) const {
  if (action < options_.action_low || action > options_.action_high) {
    throw DomainError("bump model: action " + std::to_string(action) + " outside [" + std::to_string(options_.action_low) +
                      ", " + std::to_string(options_.action_high) + "]");
  }
  return bump_reward(action, centre(psi, context), psi(3));
}

void ContinuousBumpModel::check_design(const Design& design, Index expected_size) const {
  if (design.size() != expected_size) {
    throw ShapeError("continuous design has " + std::to_string(design.size()) + " entries, expected " +
                     std::to_string(expected_size));
  }
  if ((design.array() < options_.action_low).any() || (design.array() > options_.action_high).any()) {
    throw DomainError("continuous design: action outside bounds");
  }
}

Matrix ContinuousBumpModel::design_rewards(const Matrix& psi, const Design& design, const Vector& contexts) const {
  check_design(design, contexts.size());
  Matrix g = centres(psi, contexts);
  Matrix d = g.rowwise() - design.transpose();
  return (-(d.array().square().colwise() / psi.col(3).array())).exp().matrix();
}

double ContinuousBumpModel::max_value(const RowVector& psi, double context) const {
  const double g = centre(psi, context);
  return bump_reward(clip(g), g, psi(3));
}

double ContinuousBumpModel::argmax_action(const RowVector& psi, double context) const {
  return clip(centre(psi, context));
}

Matrix ContinuousBumpModel::max_values(const Matrix& psi, const Vector& contexts) const {
  Matrix g = centres(psi, contexts);
  Matrix d = g.array() - g.array().cwiseMax(options_.action_low).cwiseMin(options_.action_high);
  return (-(d.array().square().colwise() / psi.col(3).array())).exp().matrix();
}

ad::Var ContinuousBumpModel::outcomes(ad::Tape& tape, const Matrix& psi, const ad::Var& actions, const Vector& contexts,
                                      const Matrix& noise) const {
  if (actions.rows() != 1 || actions.cols() != contexts.size()) {
    throw ShapeError("bump outcomes: actions " + shape_string(actions.rows(), actions.cols()) + " vs contexts " +
                     shape_string(1, contexts.size()));
  }
  ad::Var g = tape.constant(centres(psi, contexts));
  ad::Var h = tape.constant(psi.col(3));
  ad::Var f = ad::exp(-(ad::square(actions - g) / h));
  return f + tape.constant(noise) * options_.noise_std;
}

Vector ContinuousBumpModel::sample_outcomes(const RowVector& psi, const Design& design, const Vector& contexts,
                                            RngStream& rng) const {
  Matrix mean = design_rewards(psi, design, contexts);
  Matrix noise = sample(rng, StandardNormal{}, 1, contexts.size());
  return (mean + options_.noise_std * noise).row(0).transpose();
}

double ContinuousBumpModel::log_likelihood(const RowVector& psi, const Dataset<Design>& data) const {
  Matrix one = psi;
  return log_likelihood(one, data)(0);
}

Vector ContinuousBumpModel::log_likelihood(const Matrix& particles, const Dataset<Design>& data) const {
  const Index d = data.contexts.size();
  if (data.actions.size() != d || data.outcomes.size() != d) {
    throw ShapeError("log_likelihood: dataset fields have inconsistent lengths");
  }
  Vector out = Vector::Zero(particles.rows());
  if (d == 0) return out;
  Matrix mean = design_rewards(particles, data.actions, data.contexts);
  const double var = options_.noise_std * options_.noise_std;
  const double norm = -0.5 * std::log(2.0 * std::numbers::pi * var);
  out = ((mean.rowwise() - data.outcomes.transpose()).array().square() / (-2.0 * var)).rowwise().sum().matrix();
  out.array() += norm * static_cast<double>(d);
  return out;
}

double ContinuousBumpModel::estimate_action(const Matrix& posterior_draws, double context) const {
  Vector c = Vector::Constant(1, context);
  Matrix g = centres(posterior_draws, c);
  return g.array().cwiseMax(options_.action_low).cwiseMin(options_.action_high).mean();
}

}  // namespace mvbed
