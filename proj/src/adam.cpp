#include "mvbed/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace mvbed {

double AdamState::effective_lr(long update) const {
  long interval = options.decay_interval > 0 ? options.decay_interval : 1;
  return options.learning_rate * std::pow(options.decay, static_cast<double>(update / interval));
}

void adam_step(std::span<Parameter* const> params, std::span<const Matrix> grads, AdamState& state) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " parameters but " +
                                std::to_string(grads.size()) + " gradients");
  }
  if (state.first_moment.empty()) {
    for (Parameter* p : params) {
      state.first_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      state.second_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter set changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grads[i];
    const Matrix& v = params[i]->value;
    if (g.size() == 0) throw std::invalid_argument("adam_step: missing gradient for parameter '" + params[i]->name + "'");
    if (g.rows() != v.rows() || g.cols() != v.cols()) {
      throw ShapeError("adam_step: gradient " + shape_string(g.rows(), g.cols()) + " does not match parameter '" +
                       params[i]->name + "' " + shape_string(v.rows(), v.cols()));
    }
  }

  const AdamOptions& o = state.options;
  const double lr = state.effective_lr(state.step);
  const double t = static_cast<double>(state.step + 1);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& m = state.first_moment[i];
    Matrix& s = state.second_moment[i];
    const Matrix& g = grads[i];
    m = o.beta1 * m + (1.0 - o.beta1) * g;
    s = o.beta2 * s + (1.0 - o.beta2) * g.cwiseProduct(g);
    params[i]->value.array() -= lr * (m.array() / c1) / ((s.array() / c2).sqrt() + o.eps);
  }
  ++state.step;
}

}  // namespace mvbed
