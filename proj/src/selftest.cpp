#include "mvbed/selftest.hpp"

#include "mvbed/critic.hpp"
#include "mvbed/deployment.hpp"
#include "mvbed/models.hpp"
#include "mvbed/trainer.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>

namespace mvbed {

namespace {

using Graph = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

double evaluate(const Graph& f, const std::vector<Matrix>& inputs) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const Matrix& m : inputs) vars.push_back(tape.leaf(m, true));
  return f(tape, vars).scalar();
}

// Norm-wise relative error between reverse-mode and central-difference gradients.
double gradient_error(const Graph& f, std::vector<Matrix> inputs, double h = 1e-5) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const Matrix& m : inputs) vars.push_back(tape.leaf(m, true));
  const ad::Gradients grads = tape.backward(f(tape, vars));

  double diff = 0.0, scale = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix analytic = grads.has(vars[k]) ? grads[vars[k]] : Matrix::Zero(inputs[k].rows(), inputs[k].cols());
    for (Index i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k].data()[i];
      inputs[k].data()[i] = orig + h;
      const double up = evaluate(f, inputs);
      inputs[k].data()[i] = orig - h;
      const double down = evaluate(f, inputs);
      inputs[k].data()[i] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double a = analytic.data()[i];
      diff += (a - fd) * (a - fd);
      scale = std::max({scale, a * a, fd * fd});
    }
  }
  return std::sqrt(diff) / std::max(std::sqrt(scale), 1e-12);
}

// Uniform entries bounded away from zero in magnitude (keeps relu off its kink).
Matrix away_from_zero(RngStream& rng, Index rows, Index cols) {
  Matrix m = sample(rng, Uniform{0.2, 1.5}, rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    if (rng.uniform() < 0.5) m.data()[i] = -m.data()[i];
  }
  return m;
}

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(3);
  os << x;
  return os.str();
}

SelftestCase gradient_checks(RngStream rng) {
  using namespace ad;
  struct Case {
    const char* name;
    Graph f;
    std::vector<Matrix> inputs;
  };
  auto n = [&](Index r, Index c) { return sample(rng, StandardNormal{}, r, c); };
  std::vector<Case> cases;
  cases.push_back({"broadcast arithmetic",
                   [](Tape&, const std::vector<Var>& v) {
                     return sum((v[0] + v[1]) * v[2] / exp(v[3]) - v[0] * v[1]);
                   },
                   {n(4, 3), n(1, 3), n(4, 1), n(4, 3)}});
  cases.push_back({"exp log square",
                   [](Tape&, const std::vector<Var>& v) { return mean(log(exp(v[0]) + 1.0) * square(v[1])); },
                   {n(3, 5), n(3, 5)}});
  cases.push_back({"matmul transpose",
                   [](Tape&, const std::vector<Var>& v) { return sum(square(matmul(v[0], transpose(v[1])))); },
                   {n(4, 3), n(5, 3)}});
  cases.push_back({"axis reductions",
                   [](Tape&, const std::vector<Var>& v) {
                     return sum(mean(v[0], Axis::Rows) * sum(v[0], Axis::Cols)) + mean(v[0]);
                   },
                   {n(4, 6)}});
  cases.push_back({"logsumexp softmax",
                   [](Tape&, const std::vector<Var>& v) {
                     return sum(logsumexp(v[0], Axis::Cols)) + sum(softmax(v[0], Axis::Rows) * v[1]) +
                            sum(logsumexp(v[1], Axis::Rows));
                   },
                   {n(4, 5), n(4, 5)}});
  cases.push_back({"gather concat diagonal",
                   [](Tape&, const std::vector<Var>& v) {
                     Var c = concat({v[0], v[1]}, Axis::Cols);
                     Var r = concat({gather_rows(c, {2, 0, 2}), c}, Axis::Rows);
                     return sum(diagonal(matmul(r, transpose(r))) * 0.5) + sum(square(gather_rows(v[0], {1})));
                   },
                   {n(3, 2), n(3, 3)}});
  cases.push_back({"relu",
                   [](Tape&, const std::vector<Var>& v) { return sum(relu(v[0]) * v[1]); },
                   {away_from_zero(rng, 4, 4), n(4, 4)}});
  cases.push_back({"batch norm (train)",
                   [](Tape&, const std::vector<Var>& v) {
                     BatchNormStats st;
                     return sum(batch_norm(v[0], v[1], v[2], st, true) * v[3]);
                   },
                   {n(6, 3), n(1, 3), n(1, 3), n(6, 3)}});
  cases.push_back({"batch norm (infer)",
                   [](Tape&, const std::vector<Var>& v) {
                     BatchNormStats st{Matrix::Constant(1, 3, 0.3), Matrix::Constant(1, 3, 1.7)};
                     return sum(batch_norm(v[0], v[1], v[2], st, false) * v[3]);
                   },
                   {n(6, 3), n(1, 3), n(1, 3), n(6, 3)}});
  cases.push_back({"infonce",
                   [](Tape&, const std::vector<Var>& v) { return infonce(matmul(v[0], transpose(v[1]))); },
                   {n(6, 4), n(6, 4)}});
  {
    const Matrix gumbel = sample(rng, Gumbel01{}, 5, 4);
    cases.push_back({"gumbel-softmax relaxation",
                     [gumbel](Tape&, const std::vector<Var>& v) {
                       return sum(gumbel_softmax_relax(v[0], 0.7, gumbel, false) * v[1]);
                     },
                     {n(5, 4), n(5, 4)}});
  }
  {
    const ContinuousBumpModel model;
    const ContextPair ctx = midpoint_contexts(-3.5, 3.5, 6);
    RngStream prior = rng.split("bump-prior");
    const Matrix psi = model.sample_prior(prior, 8);
    const Matrix noise = n(8, 6);
    cases.push_back({"bump outcomes (pathwise)",
                     [model, ctx, psi, noise](Tape& t, const std::vector<Var>& v) {
                       return sum(square(model.outcomes(t, psi, v[0], ctx.experimental, noise)));
                     },
                     {n(1, 6)}});
  }
  {
    const DiscreteQuadraticModel model;
    const ContextPair ctx = negated_contexts(-3.0, -1.0, 5);
    RngStream prior = rng.split("quad-prior");
    const Matrix psi = model.sample_prior(prior, 7);
    const Matrix noise = n(7, 5);
    cases.push_back({"relaxed discrete outcomes",
                     [model, ctx, psi, noise](Tape&, const std::vector<Var>& v) {
                       Var policy = softmax(v[0], Axis::Cols);
                       return mean(square(relaxed_outcomes(model, psi, policy, ctx.experimental, noise)));
                     },
                     {n(5, 4)}});
  }

  SelftestCase out{"autodiff finite differences (rel. error < 1e-6)", true, ""};
  double worst = 0.0;
  std::string worst_name;
  for (const Case& c : cases) {
    const double err = gradient_error(c.f, c.inputs);
    if (!(err < 1e-6)) {
      out.passed = false;
      out.detail += std::string(c.name) + " error " + fmt(err) + "; ";
    }
    if (err > worst) {
      worst = err;
      worst_name = c.name;
    }
  }
  if (out.passed) out.detail = std::to_string(cases.size()) + " graphs, worst " + fmt(worst) + " (" + worst_name + ")";
  return out;
}

SelftestCase infonce_ceiling(RngStream rng) {
  SelftestCase out{"InfoNCE ceiling <= log B on 1000 random score matrices", true, ""};
  double worst_margin = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < 1000; ++t) {
    const Index b = 2 + static_cast<Index>(rng.uniform_int(63));
    const double scale = std::pow(10.0, -3.0 + 9.0 * rng.uniform());
    Matrix s = sample(rng, StandardNormal{}, b, b) * scale;
    // Every third matrix gets a dominant diagonal, the regime closest to the ceiling.
    if (t % 3 == 0) s.diagonal().array() += 50.0 * scale;
    const double value = infonce_value(s);
    const double margin = value - std::log(static_cast<double>(b));
    worst_margin = std::max(worst_margin, margin);
    if (!(margin <= 0.0) || !std::isfinite(value)) {
      out.passed = false;
      out.detail = "B=" + std::to_string(b) + " gave " + fmt(value);
      return out;
    }
  }
  out.detail = "max(bound - log B) = " + fmt(worst_margin);
  return out;
}

SelftestCase constant_critic(RngStream rng) {
  SelftestCase out{"constant critic gives a bound of exactly 0", true, ""};
  for (int t = 0; t < 100; ++t) {
    const Index b = 2 + static_cast<Index>(rng.uniform_int(200));
    const double c = 100.0 * (rng.uniform() - 0.5);
    const double v = infonce_value(Matrix::Constant(b, b, c));
    if (v != 0.0) {
      out.passed = false;
      out.detail = "B=" + std::to_string(b) + ", c=" + fmt(c) + " gave " + fmt(v);
      return out;
    }
  }
  out.detail = "100 constant matrices";
  return out;
}

SelftestCase endpoint_identities(RngStream rng) {
  SelftestCase out{"quadratic model endpoints f(-3), f(3) equal psi to 1e-12", true, ""};
  const DiscreteQuadraticModel model;
  const Matrix psi = model.sample_prior(rng, 1000);
  double worst = 0.0;
  for (Index i = 0; i < psi.rows(); ++i) {
    for (int k = 0; k < model.treatments(); ++k) {
      worst = std::max(worst, std::abs(model.mean_reward(psi.row(i), k, -3.0) - psi(i, 2 * k)));
      worst = std::max(worst, std::abs(model.mean_reward(psi.row(i), k, 3.0) - psi(i, 2 * k + 1)));
    }
  }
  out.passed = worst < 1e-12;
  out.detail = "max abs deviation " + fmt(worst);
  return out;
}

SelftestCase gumbel_frequencies(RngStream rng) {
  SelftestCase out{"Gumbel-Softmax argmax frequencies within 0.02 of softmax(log alpha)", true, ""};
  const Index k = 5, draws = 100000;
  const Matrix alpha = sample(rng, Uniform{0.1, 3.0}, 1, k);
  const Matrix log_alpha = alpha.array().log().matrix();
  const Matrix expected = ad::softmax_value(log_alpha, ad::Axis::Cols);
  Vector counts = Vector::Zero(k);
  const Matrix gumbel = sample(rng, Gumbel01{}, draws, k);
  for (Index d = 0; d < draws; ++d) {
    ad::Tape tape;
    ad::Var logits = tape.leaf(log_alpha, true);
    const Matrix& hard = gumbel_softmax_relax(logits, 0.5, gumbel.row(d), true).value();
    for (Index j = 0; j < k; ++j) counts(j) += hard(0, j);
  }
  const double worst = (counts.transpose() / static_cast<double>(draws) - expected).cwiseAbs().maxCoeff();
  out.passed = worst < 0.02;
  out.detail = "max deviation " + fmt(worst) + " over " + std::to_string(draws) + " draws";
  return out;
}

// Toy model: theta ~ N(0, 1), y_i | theta ~ N(theta, 0.5^2).
SelftestCase snis_vs_quadrature(RngStream rng) {
  SelftestCase out{"SNIS posterior mean vs grid quadrature (deviation < 0.05)", true, ""};
  const double noise_var = 0.25;
  const Vector y = (Vector(4) << 0.9, 1.4, 0.6, 1.2).finished();
  auto loglik = [&](double theta) {
    double acc = 0.0;
    for (Index i = 0; i < y.size(); ++i) acc += gaussian_log_density(y(i), theta, noise_var);
    return acc;
  };

  const Index n = 100000;
  Matrix particles = sample(rng, StandardNormal{}, n, 1);
  Vector ll(n);
  for (Index i = 0; i < n; ++i) ll(i) = loglik(particles(i, 0));
  const WeightedPosterior post = weight_particles(particles, ll);
  const double snis_mean = post.mean()(0);

  double num = 0.0, den = 0.0;
  const double lo = -8.0, hi = 8.0;
  const int cells = 20000;
  const double dx = (hi - lo) / cells;
  for (int i = 0; i <= cells; ++i) {
    const double t = lo + dx * i;
    const double w = (i == 0 || i == cells ? 0.5 : 1.0) * std::exp(gaussian_log_density(t, 0.0, 1.0) + loglik(t));
    num += w * t;
    den += w;
  }
  const double grid_mean = num / den;
  const double dev = std::abs(snis_mean - grid_mean);
  out.passed = dev < 0.05;
  out.detail = "SNIS " + fmt(snis_mean) + " vs grid " + fmt(grid_mean) + " (ESS " + fmt(post.ess) + ")";
  return out;
}

// Discretised correlated Gaussian pair on a grid; the critic log p(a | b) is optimal.
SelftestCase analytic_critic_mi(RngStream rng) {
  SelftestCase out{"InfoNCE with analytic critic within 0.1 nat of brute-force MI (B = 4096)", true, ""};
  const int g = 24;
  const double rho = 0.8;
  Matrix joint(g, g);
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) {
      const double a = -3.0 + 6.0 * (i + 0.5) / g, b = -3.0 + 6.0 * (j + 0.5) / g;
      joint(i, j) = std::exp(-(a * a - 2 * rho * a * b + b * b) / (2 * (1 - rho * rho)));
    }
  }
  joint /= joint.sum();
  const Vector pa = joint.rowwise().sum();
  const RowVector pb = joint.colwise().sum();
  double mi = 0.0;
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) {
      if (joint(i, j) > 0.0) mi += joint(i, j) * std::log(joint(i, j) / (pa(i) * pb(j)));
    }
  }

  // Sample pairs by inverting the flattened CDF.
  const Index batch = 4096;
  std::vector<double> cdf(static_cast<std::size_t>(g * g));
  double acc = 0.0;
  for (int c = 0; c < g * g; ++c) cdf[static_cast<std::size_t>(c)] = acc += joint(c / g, c % g);
  std::vector<int> as(batch), bs(batch);
  for (Index s = 0; s < batch; ++s) {
    const double u = rng.uniform() * acc;
    const auto c = static_cast<int>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    as[static_cast<std::size_t>(s)] = std::min(c, g * g - 1) / g;
    bs[static_cast<std::size_t>(s)] = std::min(c, g * g - 1) % g;
  }
  Matrix log_cond(g, g);  // log p(a | b)
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) log_cond(i, j) = std::log(joint(i, j) / pb(j));
  }
  Matrix s(batch, batch);
  for (Index i = 0; i < batch; ++i) {
    for (Index j = 0; j < batch; ++j) s(i, j) = log_cond(as[static_cast<std::size_t>(i)], bs[static_cast<std::size_t>(j)]);
  }
  const double bound = infonce_value(s);
  const double gap = std::abs(bound - mi);
  out.passed = gap < 0.1;
  out.detail = "InfoNCE " + fmt(bound) + " vs MI " + fmt(mi);
  return out;
}

}  // namespace

std::vector<SelftestCase> run_selftest(std::uint64_t seed) {
  const RngStream root = RngStream(seed).split("selftest");
  using Check = SelftestCase (*)(RngStream);
  const std::vector<std::pair<const char*, Check>> checks{
      {"gradients", gradient_checks},        {"ceiling", infonce_ceiling},
      {"constant", constant_critic},         {"endpoints", endpoint_identities},
      {"gumbel", gumbel_frequencies},        {"snis", snis_vs_quadrature},
      {"mutual-information", analytic_critic_mi},
  };
  std::vector<SelftestCase> out;
  for (const auto& [label, fn] : checks) {
    try {
      out.push_back(fn(root.split(label)));
    } catch (const std::exception& e) {
      out.push_back({label, false, std::string("threw: ") + e.what()});
    }
  }
  return out;
}

}  // namespace mvbed
