// Separable critic U(y, m*) = <E_y(y), E_m(m*)> and the InfoNCE bound
// computed with in-batch contrastive samples.

#pragma once

#include "mvbed/adam.hpp"
#include "mvbed/autodiff.hpp"
#include "mvbed/random.hpp"

#include <string>
#include <vector>

namespace mvbed {

enum class CriticPreset {
  // Linear(in, 512) -> batch norm -> relu -> Linear(512, 32).
  Discrete,
  // Linear(in, 2 in) -> relu -> Linear(., 412) -> relu -> Linear(., 256) -> relu -> Linear(., 32).
  Continuous,
};

enum class Mode { Train, Infer };

inline constexpr Index kEncodingDim = 32;

std::string preset_name(CriticPreset preset);
CriticPreset preset_from_name(const std::string& name);

// Multi-layer perceptron whose weights live in a shared parameter list.
struct Encoder {
  struct Layer {
    std::size_t weight;  // index into the owning parameter list, [in, out]
    std::size_t bias;    // [1, out]
  };
  Index input_dim = 0;
  std::vector<Layer> layers;
  bool batch_norm = false;  // after the first layer
  std::size_t bn_gamma = 0;
  std::size_t bn_beta = 0;
  ad::BatchNormStats bn_stats;
};

class SeparableCritic {
 public:
  SeparableCritic() = default;
  SeparableCritic(CriticPreset preset, Index outcome_dim, Index maxvalue_dim, RngStream& rng);

  CriticPreset preset() const { return preset_; }
  Index outcome_dim() const { return outcome_.input_dim; }
  Index maxvalue_dim() const { return maxvalue_.input_dim; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Parameter*> parameter_ptrs();

  Encoder& outcome_encoder() { return outcome_; }
  Encoder& maxvalue_encoder() { return maxvalue_; }
  const Encoder& outcome_encoder() const { return outcome_; }
  const Encoder& maxvalue_encoder() const { return maxvalue_; }

  // Puts every parameter on the tape, in parameters() order.
  std::vector<ad::Var> bind(ad::Tape& tape, bool trainable) const;

  // Training mode updates batch-norm running statistics.
  ad::Var encode_outcomes(const std::vector<ad::Var>& bound, const ad::Var& y, Mode mode);
  ad::Var encode_maxvalues(const std::vector<ad::Var>& bound, const ad::Var& m, Mode mode);

  // S[i][j] = <E_y(y_i), E_m(m_j)>.
  ad::Var scores(const std::vector<ad::Var>& bound, const ad::Var& y, const ad::Var& m, Mode mode);

  // Inference-mode score matrix without gradients.
  Matrix score_matrix(const Matrix& y, const Matrix& m) const;

  // Assembles a critic from deserialised parts (checkpoint loading).
  static SeparableCritic from_parts(CriticPreset preset, std::vector<Parameter> params, Encoder outcome, Encoder maxvalue);

 private:
  ad::Var encode(Encoder& enc, const std::vector<ad::Var>& bound, const ad::Var& x, Mode mode);
  Encoder build_encoder(const std::string& prefix, Index input_dim, RngStream& rng);
  std::size_t add_param(std::string name, Matrix value);

  CriticPreset preset_ = CriticPreset::Continuous;
  std::vector<Parameter> params_;
  Encoder outcome_;
  Encoder maxvalue_;
};

// mean_i [ S_ii - logsumexp_j S_ij + log B ]; requires a square S with B >= 2.
ad::Var infonce(const ad::Var& scores);
double infonce_value(const Matrix& scores);

}  // namespace mvbed
