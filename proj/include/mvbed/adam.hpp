#pragma once

#include "mvbed/autodiff.hpp"

#include <span>
#include <string>
#include <vector>

namespace mvbed {

// A named trainable array.
struct Parameter {
  std::string name;
  Matrix value;
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double decay = 0.96;
  long decay_interval = 1000;
};

struct AdamState {
  AdamOptions options;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  long step = 0;  // number of updates applied so far

  explicit AdamState(AdamOptions opts = {}) : options(opts) {}

  // Learning rate used by the update with 0-based index `update`.
  double effective_lr(long update) const;
};

// One descent step: params -= lr * m_hat / (sqrt(v_hat) + eps).
// grads[i] must have the shape of params[i]->value.
void adam_step(std::span<Parameter* const> params, std::span<const Matrix> grads, AdamState& state);

}  // namespace mvbed
