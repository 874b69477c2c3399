#include "mvbed/deployment.hpp"

#include <doctest.h>

#include <cmath>

using namespace mvbed;

TEST_SUITE("deployment") {

TEST_CASE("empty dataset keeps uniform weights") {
  ContinuousBumpModel model;
  RngStream rng(1);
  Dataset<Vector> empty{Vector(), Vector(), Vector()};
  const WeightedPosterior post = snis_posterior(model, empty, 1000, rng);
  CHECK((post.weights().array() - 1e-3).abs().maxCoeff() < 1e-15);
  CHECK(post.ess == doctest::Approx(1000.0).epsilon(1e-12));
}

TEST_CASE("two particles with likelihood ratio e") {
  Vector ll(2);
  ll << 1.0, 0.0;
  const WeightedPosterior post = weight_particles(Matrix::Zero(2, 1), ll);
  CHECK(post.weights()(0) == doctest::Approx(std::exp(1.0) / (1 + std::exp(1.0))).epsilon(1e-14));
  CHECK(post.weights()(1) == doctest::Approx(0.2689414213699951).epsilon(1e-14));
}

TEST_CASE("impossible data is reported, not silently normalised") {
  Vector ll = Vector::Constant(3, -std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(weight_particles(Matrix::Zero(3, 1), ll), PosteriorError);
  ll(0) = std::nan("");
  CHECK_THROWS_AS(weight_particles(Matrix::Zero(3, 1), ll), PosteriorError);
}

TEST_CASE("posterior estimates") {
  SUBCASE("degenerate posterior reproduces the particle") {
    ContinuousBumpModel model;
    Matrix particles(2, 4);
    particles << 0.5, 0.5, 0.5, 0.5, 0.2, 0.9, 0.3, 0.7;
    Vector ll(2);
    ll << 0.0, -std::numeric_limits<double>::infinity();
    const WeightedPosterior post = weight_particles(particles, ll);
    Vector cs(2);
    cs << 2.0, -1.0;
    RngStream rng(2);
    const auto est = posterior_estimates(model, post, cs, 50, rng);
    CHECK(est.psi == particles.row(0));
    CHECK(est.max_values(0) == 1.0);
    CHECK(est.actions[0] == 3.5);
  }
  SUBCASE("continuous: mean of per-draw optima") {
    ContinuousBumpModel model;
    Matrix draws(2, 4);
    draws << 1.0, 0.0, 0.0, 0.5, 3.0, 0.0, 0.0, 0.5;
    CHECK(model.estimate_action(draws, 0.4) == 2.0);
  }
  SUBCASE("discrete: treatment with the best posterior-mean reward") {
    DiscreteQuadraticModel model;
    Matrix draws(2, 8);
    draws << 0, 8, 0, 12, 0, 0, 0, 0, 0, 12, 0, 10, 0, 0, 0, 0;
    CHECK(model.estimate_action(draws, 3.0) == 1);
  }
}

TEST_CASE("SNIS agrees with grid quadrature on a bump-model slice") {
  // One experiment at c = 0 identifies psi0 only through the bump; compare the
  // posterior mean of psi0 with quadrature over the uniform prior.
  ContinuousBumpModel model;
  Vector c(1), a(1);
  c << 0.0;
  a << 0.4;
  RowVector truth(4);
  truth << 0.7, 0.3, 0.5, 0.6;
  RngStream rng(3);
  Dataset<Vector> data{c, a, model.sample_outcomes(truth, a, c, rng)};
  const WeightedPosterior post = snis_posterior(model, data, 100000, rng);

  const int n = 20001;
  double num = 0, den = 0;
  for (int i = 0; i < n; ++i) {
    const double p0 = 0.1 + static_cast<double>(i) / (n - 1);
    // psi3 is integrated by a second grid.
    for (int j = 0; j < 41; ++j) {
      const double p3 = 0.1 + j / 40.0;
      const double f = std::exp(-(a(0) - p0) * (a(0) - p0) / p3);
      const double w = std::exp(-(data.outcomes(0) - f) * (data.outcomes(0) - f) / (2 * 0.01));
      num += w * p0;
      den += w;
    }
  }
  CHECK(std::abs(post.mean()(0) - num / den) < 0.05);
}

TEST_CASE("oracle posterior scores perfectly") {
  DiscreteQuadraticModel model;
  RngStream rng(4);
  const RowVector truth = model.sample_prior(rng, 1).row(0);
  const Vector cs = linspace(1, 3, 5);
  PosteriorEstimates<DiscreteQuadraticModel> est;
  est.max_values = model.max_values(truth, cs).row(0).transpose();
  est.psi = truth;
  for (Index j = 0; j < cs.size(); ++j) est.actions.push_back(model.argmax_action(truth, cs(j)));
  const RealisationMetrics m = score_estimates(model, truth, est, cs);
  CHECK(m.mse_maxvalue == 0.0);
  CHECK(m.mse_psi == 0.0);
  CHECK(m.regret == 0.0);
  CHECK(m.action_score == 1.0);
}

TEST_CASE("realisations are independent of the worker count") {
  DiscreteQuadraticModel model;
  const ContextPair ctx = negated_contexts(-3, -1, 4);
  DeployConfig cfg;
  cfg.n_envs = 24;
  cfg.snis_particles = 2000;
  cfg.posterior_draws = 200;
  const RngStream rng = RngStream(5).split("deploy");
  cfg.workers = 1;
  const auto serial = run_realisations(model, ctx, {0, 1, 0, 1}, cfg, rng);
  cfg.workers = 8;
  const auto parallel = run_realisations(model, ctx, {0, 1, 0, 1}, cfg, rng);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].regret == parallel[i].regret);
    CHECK(serial[i].mse_maxvalue == parallel[i].mse_maxvalue);
  }
  const MetricSummary s = summarise(serial);
  CHECK(s.n_envs == 24);
  CHECK(s.failures == 0);
  CHECK(s.action_score.mean >= 0.0);
  CHECK(s.action_score.mean <= 1.0);
}

TEST_CASE("calibration diagnostic") {
  ContinuousBumpModel model;
  SUBCASE("no observations: posterior std is the prior std") {
    RngStream rng(6);
    Dataset<Vector> empty{Vector(), Vector(), Vector()};
    const WeightedPosterior post = snis_posterior(model, empty, 100000, rng);
    const double prior_sd = 1.0 / std::sqrt(12.0);
    CHECK((post.stddev().array() - prior_sd).abs().maxCoeff() < 0.003);
  }
  SUBCASE("more experiments shrink the median L2 error") {
    DeployConfig cfg;
    cfg.n_envs = 60;
    cfg.snis_particles = 5000;
    cfg.posterior_draws = 500;
    cfg.workers = 4;
    const RngStream rng = RngStream(7).split("deploy");
    auto median_error = [&](Index d) {
      const ContextPair ctx = midpoint_contexts(-3.5, 3.5, d);
      const CalibrationSeries s = calibration_diagnostic(model, ctx, Vector(ctx.experimental), cfg, rng);
      return median(s.l2_error);
    };
    CHECK(median_error(12) < median_error(2));
  }
  SUBCASE("rolling mean of a constant") {
    const std::vector<double> x(50, 0.37);
    for (double v : rolling_mean(x, 7)) CHECK(v == doctest::Approx(0.37).epsilon(1e-15));
  }
}

TEST_CASE("csv output") {
  std::vector<RealisationMetrics> r(3);
  for (int i = 0; i < 3; ++i) {
    r[static_cast<std::size_t>(i)].posterior_std = 0.1 * i;
    r[static_cast<std::size_t>(i)].l2_error = 1.0 * i;
  }
  const std::string csv = calibration_csv(calibration_series(r, 2));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

}  // TEST_SUITE
