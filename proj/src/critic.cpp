#include "mvbed/critic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mvbed {

std::string preset_name(CriticPreset preset) {
  return preset == CriticPreset::Discrete ? "discrete" : "continuous";
}

CriticPreset preset_from_name(const std::string& name) {
  if (name == "discrete") return CriticPreset::Discrete;
  if (name == "continuous") return CriticPreset::Continuous;
  throw std::invalid_argument("unknown critic preset '" + name + "'");
}

SeparableCritic::SeparableCritic(CriticPreset preset, Index outcome_dim, Index maxvalue_dim, RngStream& rng)
    : preset_(preset) {
  if (outcome_dim < 1 || maxvalue_dim < 1) throw ShapeError("critic: encoder input widths must be positive");
  RngStream init = rng.split("critic-init");
  outcome_ = build_encoder("outcome", outcome_dim, init);
  maxvalue_ = build_encoder("maxvalue", maxvalue_dim, init);
}

std::size_t SeparableCritic::add_param(std::string name, Matrix value) {
  params_.push_back(Parameter{std::move(name), std::move(value)});
  return params_.size() - 1;
}

Encoder SeparableCritic::build_encoder(const std::string& prefix, Index input_dim, RngStream& rng) {
  std::vector<Index> widths{input_dim};
  if (preset_ == CriticPreset::Discrete) {
    widths.insert(widths.end(), {512, kEncodingDim});
  } else {
    widths.insert(widths.end(), {2 * input_dim, 412, 256, kEncodingDim});
  }

  Encoder enc;
  enc.input_dim = input_dim;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const Index fan_in = widths[l], fan_out = widths[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::string stem = prefix + ".layer" + std::to_string(l);
    Encoder::Layer layer;
    layer.weight = add_param(stem + ".weight", sample(rng, Uniform{-limit, limit}, fan_in, fan_out));
    layer.bias = add_param(stem + ".bias", Matrix::Zero(1, fan_out));
    enc.layers.push_back(layer);
  }
  if (preset_ == CriticPreset::Discrete) {
    const Index hidden = widths[1];
    enc.batch_norm = true;
    enc.bn_gamma = add_param(prefix + ".bn.gamma", Matrix::Ones(1, hidden));
    enc.bn_beta = add_param(prefix + ".bn.beta", Matrix::Zero(1, hidden));
    enc.bn_stats.running_mean = Matrix::Zero(1, hidden);
    enc.bn_stats.running_var = Matrix::Ones(1, hidden);
  }
  return enc;
}

SeparableCritic SeparableCritic::from_parts(CriticPreset preset, std::vector<Parameter> params, Encoder outcome,
                                            Encoder maxvalue) {
  SeparableCritic c;
  c.preset_ = preset;
  c.params_ = std::move(params);
  c.outcome_ = std::move(outcome);
  c.maxvalue_ = std::move(maxvalue);
  return c;
}

std::vector<Parameter*> SeparableCritic::parameter_ptrs() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (Parameter& p : params_) out.push_back(&p);
  return out;
}

std::vector<ad::Var> SeparableCritic::bind(ad::Tape& tape, bool trainable) const {
  std::vector<ad::Var> out;
  out.reserve(params_.size());
  for (const Parameter& p : params_) out.push_back(tape.leaf(p.value, trainable));
  return out;
}

ad::Var SeparableCritic::encode(Encoder& enc, const std::vector<ad::Var>& bound, const ad::Var& x, Mode mode) {
  if (bound.size() != params_.size()) throw std::invalid_argument("critic: binding does not match parameter list");
  if (x.cols() != enc.input_dim) {
    throw ShapeError("critic: input " + shape_string(x.rows(), x.cols()) + " but encoder expects width " +
                     std::to_string(enc.input_dim));
  }
  ad::Var h = x;
  for (std::size_t l = 0; l < enc.layers.size(); ++l) {
    h = ad::matmul(h, bound[enc.layers[l].weight]) + bound[enc.layers[l].bias];
    if (l + 1 == enc.layers.size()) break;
    if (l == 0 && enc.batch_norm) {
      h = ad::batch_norm(h, bound[enc.bn_gamma], bound[enc.bn_beta], enc.bn_stats, mode == Mode::Train);
    }
    h = ad::relu(h);
  }
  return h;
}

ad::Var SeparableCritic::encode_outcomes(const std::vector<ad::Var>& bound, const ad::Var& y, Mode mode) {
  return encode(outcome_, bound, y, mode);
}

ad::Var SeparableCritic::encode_maxvalues(const std::vector<ad::Var>& bound, const ad::Var& m, Mode mode) {
  return encode(maxvalue_, bound, m, mode);
}

ad::Var SeparableCritic::scores(const std::vector<ad::Var>& bound, const ad::Var& y, const ad::Var& m, Mode mode) {
  if (y.rows() != m.rows()) {
    throw ShapeError("score_matrix: outcome batch " + shape_string(y.rows(), y.cols()) + " vs max-value batch " +
                     shape_string(m.rows(), m.cols()));
  }
  if (y.rows() < 2) throw ShapeError("score_matrix: need at least 2 samples for contrastive scores");
  ad::Var ey = encode_outcomes(bound, y, mode);
  ad::Var em = encode_maxvalues(bound, m, mode);
  return ad::matmul(ey, ad::transpose(em));
}

Matrix SeparableCritic::score_matrix(const Matrix& y, const Matrix& m) const {
  SeparableCritic frozen = *this;
  ad::Tape tape;
  auto bound = frozen.bind(tape, false);
  return frozen.scores(bound, tape.constant(y), tape.constant(m), Mode::Infer).value();
}

namespace {

void check_square(Index rows, Index cols) {
  if (rows != cols) throw ShapeError("infonce: score matrix must be square, got " + shape_string(rows, cols));
  if (rows < 1) throw ShapeError("infonce: empty score matrix");
}

// Per-row terms (S_ii - m_i) - log sum_j exp(S_ij - m_i) + log B, with m_i the row max.
Vector infonce_rows(const Matrix& s) {
  const double log_b = std::log(static_cast<double>(s.rows()));
  Vector out(s.rows());
  for (Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    // The positive pair is part of the denominator, so the log-ratio is <= 0.
    const double ratio = (s(i, i) - m) - std::log((s.row(i).array() - m).exp().sum());
    out(i) = std::min(ratio, 0.0) + log_b;
  }
  return out;
}

// Each row term is <= log B, but their rounded mean can land one ulp above it.
double mean_capped(const Vector& rows) {
  const double log_b = std::log(static_cast<double>(rows.size()));
  return std::min(rows.sum() / static_cast<double>(rows.size()), log_b);
}

}  // namespace

ad::Var infonce(const ad::Var& scores) {
  check_square(scores.rows(), scores.cols());
  ad::Tape& tape = *scores.tape();
  const Matrix& s = scores.value();
  Matrix out = Matrix::Constant(1, 1, mean_capped(infonce_rows(s)));
  const int id = scores.id();
  return tape.record(std::move(out), {id}, [id](const ad::Tape& tp, const Matrix& g, std::vector<Matrix>& grads) {
    const Matrix& s = tp.value(id);
    const double b = static_cast<double>(s.rows());
    Matrix d = -ad::softmax_value(s, ad::Axis::Cols);
    d.diagonal().array() += 1.0;
    tp.accumulate(grads, id, d * (g(0, 0) / b));
  });
}

double infonce_value(const Matrix& scores) {
  check_square(scores.rows(), scores.cols());
  return mean_capped(infonce_rows(scores));
}

}  // namespace mvbed
