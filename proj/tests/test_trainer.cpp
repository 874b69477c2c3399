#include "mvbed/baselines.hpp"
#include "mvbed/trainer.hpp"

#include <doctest.h>

#include <cmath>

using namespace mvbed;

namespace {

TrainConfig tiny_train(long steps) {
  TrainConfig cfg;
  cfg.steps = steps;
  cfg.batch_size = 64;
  cfg.temperature_interval = 10;
  cfg.log_interval = 5;
  cfg.bn_calibration_batches = 2;
  return cfg;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("anneal schedule") {
  TrainConfig cfg;
  cfg.steps = 50000;
  AnnealState s0 = anneal_schedule(0, cfg);
  CHECK(s0.temperature == 2.0);
  CHECK_FALSE(s0.hard);
  AnnealState s1 = anneal_schedule(20000, cfg);
  CHECK(s1.temperature == 0.5);
  CHECK_FALSE(s1.hard);
  AnnealState s2 = anneal_schedule(40000, cfg);
  CHECK(s2.temperature == 0.125);
  CHECK(s2.hard);
  CHECK_FALSE(anneal_schedule(39999, cfg).hard);
}

TEST_CASE("extract design") {
  DiscreteQuadraticModel dm;
  DiscretePolicy p;
  p.logits = Matrix::Zero(2, 4);
  p.logits.row(0) << 0, 5, -1, -1;
  CHECK(extract_design(dm, p) == std::vector<int>{1, 0});

  ContinuousBumpModel cm;
  ContinuousDesign d{Vector(3)};
  d.actions << 4.7, -5.0, 1.25;
  const Vector a = extract_design(cm, d);
  CHECK(a(0) == 4.0);
  CHECK(a(1) == -4.0);
  CHECK(a(2) == 1.25);
}

TEST_CASE("gumbel-softmax relaxation") {
  ad::Tape t;
  RngStream rng(1);
  SUBCASE("high temperature with uniform logits is near uniform") {
    const Matrix pi = gumbel_softmax_relax(t.constant(Matrix::Zero(5, 4)), 1e4, rng, false).value();
    CHECK((pi.array() - 0.25).abs().maxCoeff() < 1e-3);
  }
  SUBCASE("hard mode emits one-hot rows with soft gradients") {
    Matrix l = sample(rng, StandardNormal{}, 6, 4);
    ad::Var logits = t.leaf(l);
    ad::Var pi = gumbel_softmax_relax(logits, 0.7, rng, true);
    for (Index d = 0; d < 6; ++d) {
      CHECK(pi.value().row(d).sum() == 1.0);
      CHECK(pi.value().row(d).maxCoeff() == 1.0);
      CHECK((pi.value().row(d).array() == 0.0).count() == 3);
    }
    const Matrix w = sample(rng, StandardNormal{}, 6, 4);
    CHECK(t.backward(ad::sum(pi * t.constant(w)))[logits].cwiseAbs().maxCoeff() > 0.0);
  }
  SUBCASE("argmax frequencies match softmax of the logits") {
    Matrix l(1, 4);
    l << 0.5, -0.3, 1.1, -1.0;
    const Matrix target = ad::softmax_value(l, ad::Axis::Cols);
    const int n = 100000;
    Matrix gumbel = sample(rng, Gumbel01{}, n, 4);
    Matrix logits = l.replicate(n, 1);
    const Matrix pi = gumbel_softmax_relax(t.constant(logits), 0.3, gumbel, false).value();
    RowVector freq = RowVector::Zero(4);
    for (Index i = 0; i < n; ++i) freq(argmax_lowest(pi.row(i))) += 1.0 / n;
    CHECK((freq - target).cwiseAbs().maxCoeff() < 0.02);
  }
}

TEST_CASE("relaxed outcomes") {
  DiscreteQuadraticModel model;
  RngStream rng(2);
  const Matrix psi = model.sample_prior(rng, 5);
  const Vector c = linspace(-3, -1, 3);
  const Matrix noise = sample(rng, StandardNormal{}, 5, 3);

  SUBCASE("one-hot policy reproduces the concrete design") {
    ad::Tape t;
    Matrix pi = Matrix::Zero(3, 4);
    pi(0, 2) = pi(1, 0) = pi(2, 3) = 1.0;
    const Matrix y = relaxed_outcomes(model, psi, t.constant(pi), c, Matrix::Zero(5, 3)).value();
    CHECK((y - model.design_rewards(psi, {2, 0, 3}, c)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("equal mixture of treatments sharing a mean") {
    ad::Tape t;
    RowVector means(8);
    means << 5, 15, 5, 15, -2, -1, -7, 3;
    Matrix pi = Matrix::Zero(3, 4);
    pi.col(0).setConstant(0.5);
    pi.col(1).setConstant(0.5);
    const Matrix y = relaxed_outcomes(model, means, t.constant(pi), c, Matrix::Zero(1, 3)).value();
    for (Index d = 0; d < 3; ++d) CHECK(y(0, d) == doctest::Approx(model.mean_reward(means, 0, c(d))).epsilon(1e-14));
  }
  SUBCASE("derivative with respect to policy weights is the treatment reward") {
    ad::Tape t;
    ad::Var pi = t.leaf(Matrix::Constant(3, 4, 0.25));
    const Matrix g = t.backward(ad::sum(relaxed_outcomes(model, psi.topRows(1), pi, c, noise.topRows(1))))[pi];
    for (Index d = 0; d < 3; ++d) {
      for (int k = 0; k < 4; ++k) CHECK(g(d, k) == doctest::Approx(model.mean_reward(psi.row(0), k, c(d))).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero training steps return the inputs unchanged") {
  const ContextPair ctx = midpoint_contexts(-3.5, 3.5, 4);
  ContinuousBumpModel cm;
  RngStream rng(3);
  ContinuousDesign init = initial_design(cm, 4, rng);
  SeparableCritic critic(CriticPreset::Continuous, 4, 3, rng);
  const Matrix w0 = critic.parameters()[0].value;
  TrainResult r = train_designs(cm, ctx, init, critic, tiny_train(0), rng);
  CHECK(std::get<ContinuousDesign>(r.design).actions == init.actions);
  CHECK(r.critic.parameters()[0].value == w0);
}

TEST_CASE("short training is reproducible and respects bounds") {
  const ContextPair ctx = midpoint_contexts(-3.5, 3.5, 4);
  ContinuousBumpModel cm;
  auto run = [&] {
    RngStream rng(11);
    RngStream init_rng = rng.split("init");
    RngStream critic_rng = rng.split("critic");
    RngStream batch_rng = rng.split("batches");
    return train_designs(cm, ctx, initial_design(cm, 4, init_rng), SeparableCritic(CriticPreset::Continuous, 4, 3, critic_rng),
                         tiny_train(20), batch_rng);
  };
  TrainResult a = run(), b = run();
  CHECK(std::get<ContinuousDesign>(a.design).actions == std::get<ContinuousDesign>(b.design).actions);
  CHECK(a.log.records.size() == 4);
  CHECK(a.log.records.back().step == 20);
  const Vector x = extract_design(cm, std::get<ContinuousDesign>(a.design));
  CHECK(x.maxCoeff() <= 4.0);
  CHECK(x.minCoeff() >= -4.0);
}

TEST_CASE("discrete training moves logits and logs the schedule") {
  const ContextPair ctx = negated_contexts(-3, -1, 3);
  DiscreteQuadraticModel dm;
  RngStream rng(5);
  RngStream critic_rng = rng.split("critic");
  TrainConfig cfg = tiny_train(20);
  TrainResult r = train_designs(dm, ctx, initial_policy(dm, 3, cfg), SeparableCritic(CriticPreset::Discrete, 3, 3, critic_rng),
                                cfg, rng);
  const auto& pol = std::get<DiscretePolicy>(r.design);
  CHECK(pol.logits.cwiseAbs().maxCoeff() > 0.0);
  CHECK(r.log.records.front().temperature == 2.0);
  CHECK(r.log.records.back().hard);
}

TEST_CASE("design gradient matches finite differences of the bound") {
  const ContextPair ctx = midpoint_contexts(-3.5, 3.5, 3);
  ContinuousBumpModel cm;
  RngStream rng(8);
  SeparableCritic critic(CriticPreset::Continuous, 3, 2, rng);
  Vector a(3);
  a << -1.0, 0.5, 2.0;
  RngStream r0(99);
  ObjectiveGradients g = objective_gradients(cm, ctx, a, critic, 16, r0, Mode::Train);
  for (Index j = 0; j < 3; ++j) {
    auto f = [&](double h) {
      Vector ap = a;
      ap(j) += h;
      RngStream r(99);
      return objective_gradients(cm, ctx, ap, critic, 16, r, Mode::Train).bound;
    };
    const double fd = (f(1e-5) - f(-1e-5)) / 2e-5;
    CHECK(std::abs(fd - g.design_gradient(0, j)) / std::max(1.0, std::abs(fd)) < 1e-5);
  }
}

TEST_CASE("invalid configurations are rejected") {
  TrainConfig cfg;
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.hard_fraction = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

}  // TEST_SUITE
