#include "mvbed/adam.hpp"
#include "mvbed/autodiff.hpp"
#include "mvbed/random.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>

using namespace mvbed;
using ad::Axis;

namespace {

Matrix row(std::initializer_list<double> xs) {
  Matrix m(1, static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) m(0, i++) = x;
  return m;
}

// Largest relative error between the tape gradient of f and central differences.
double fd_error(const std::function<ad::Var(ad::Tape&, const ad::Var&)>& f, const Matrix& x0, double h = 1e-5) {
  ad::Tape tape;
  ad::Var x = tape.leaf(x0);
  const Matrix g = tape.backward(f(tape, x))[x];
  double worst = 0.0;
  for (Index i = 0; i < x0.size(); ++i) {
    auto eval = [&](double delta) {
      ad::Tape t;
      Matrix xp = x0;
      xp.data()[i] += delta;
      return f(t, t.leaf(xp)).scalar();
    };
    const double fd = (eval(h) - eval(-h)) / (2 * h);
    const double err = std::abs(fd - g.data()[i]) / std::max(1.0, std::abs(fd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("matmul by the identity is a no-op") {
  ad::Tape t;
  RngStream rng(1);
  const Matrix x = sample(rng, StandardNormal{}, 3, 5);
  ad::Var y = ad::matmul(t.constant(Matrix::Identity(3, 3)), t.constant(x));
  CHECK((y.value() - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("logsumexp and softmax closed forms") {
  ad::Tape t;
  CHECK(ad::logsumexp(t.constant(row({0, 0})), Axis::Cols).scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const Matrix s = ad::softmax(t.constant(row({1, 1, 1, 1})), Axis::Cols).value();
  for (Index j = 0; j < 4; ++j) CHECK(s(0, j) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("relu subgradient is zero at and below zero") {
  ad::Tape t;
  ad::Var x = t.leaf(row({-1, 2, 0}));
  const Matrix g = t.backward(ad::sum(ad::relu(x)))[x];
  CHECK(g(0, 0) == 0.0);
  CHECK(g(0, 1) == 1.0);
  CHECK(g(0, 2) == 0.0);
}

TEST_CASE("derivative of x^2 at 3 is 6") {
  ad::Tape t;
  ad::Var x = t.leaf(row({3}));
  CHECK(t.backward(ad::square(x))[x](0, 0) == 6.0);
}

TEST_CASE("gradient of logsumexp is softmax") {
  ad::Tape t;
  const Matrix v = row({0.3, -1.2, 2.0, 0.7});
  ad::Var x = t.leaf(v);
  const Matrix g = t.backward(ad::logsumexp(x, Axis::Cols))[x];
  const Matrix s = ad::softmax_value(v, Axis::Cols);
  CHECK((g - s).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("composite graphs match central finite differences") {
  RngStream rng(7);
  const Matrix w = sample(rng, StandardNormal{}, 4, 3);
  const Matrix x0 = sample(rng, Uniform{0.5, 1.5}, 5, 4);

  SUBCASE("matmul, exp, log, logsumexp") {
    auto f = [&](ad::Tape& t, const ad::Var& x) {
      ad::Var h = ad::matmul(ad::log(x), t.constant(w));
      return ad::mean(ad::logsumexp(ad::exp(h) * h, Axis::Cols));
    };
    CHECK(fd_error(f, x0) < 1e-6);
  }
  SUBCASE("broadcast arithmetic and softmax") {
    const Matrix b = sample(rng, Uniform{1.0, 2.0}, 1, 4);
    auto f = [&](ad::Tape& t, const ad::Var& x) {
      ad::Var z = (x - t.constant(b)) / (x + t.constant(b));
      return ad::sum(ad::square(ad::softmax(z, Axis::Rows)) * ad::neg(z));
    };
    CHECK(fd_error(f, x0) < 1e-6);
  }
  SUBCASE("gather, concat, transpose, diagonal") {
    auto f = [&](ad::Tape&, const ad::Var& x) {
      ad::Var g = ad::gather_rows(x, {4, 0, 0, 2});
      ad::Var sq = ad::matmul(g, ad::transpose(g));
      return ad::sum(ad::concat({ad::diagonal(sq), ad::mean(sq, Axis::Cols)}, Axis::Cols));
    };
    CHECK(fd_error(f, x0) < 1e-6);
  }
  SUBCASE("batch norm in training mode") {
    auto f = [&](ad::Tape& t, const ad::Var& x) {
      ad::BatchNormStats stats{Matrix::Zero(1, 4), Matrix::Ones(1, 4)};
      ad::Var y = ad::batch_norm(x, t.constant(Matrix::Constant(1, 4, 1.3)), t.constant(Matrix::Constant(1, 4, 0.2)),
                                 stats, true);
      return ad::sum(ad::square(y) * t.constant(x0));
    };
    CHECK(fd_error(f, x0) < 1e-6);
  }
}

TEST_CASE("shape mismatches name both shapes") {
  ad::Tape t;
  ad::Var a = t.constant(Matrix::Ones(2, 3));
  ad::Var b = t.constant(Matrix::Ones(3, 2));
  try {
    (void)ad::add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[3, 2]") != std::string::npos);
  }
  CHECK_THROWS_AS((void)ad::matmul(a, a), ShapeError);
}

TEST_CASE("log and div reject invalid operands") {
  ad::Tape t;
  CHECK_THROWS_AS((void)ad::log(t.constant(row({1, 0}))), DomainError);
  CHECK_THROWS_AS((void)ad::log(t.constant(row({-1}))), DomainError);
  CHECK_THROWS_AS((void)ad::div(t.constant(row({1})), t.constant(row({0}))), DomainError);
}

TEST_CASE("backward requires a scalar loss") {
  ad::Tape t;
  ad::Var x = t.leaf(row({1, 2}));
  CHECK_THROWS_AS((void)t.backward(ad::exp(x)), ShapeError);
}

TEST_CASE("repeated backward passes give identical gradients") {
  ad::Tape t;
  ad::Var x = t.leaf(row({0.5, -0.25, 2.0}));
  ad::Var loss = ad::sum(ad::exp(x) * x);
  const Matrix g1 = t.backward(loss)[x];
  const Matrix g2 = t.backward(loss)[x];
  CHECK(g1 == g2);
}

TEST_CASE("softmax rows sum to one and logsumexp survives large shifts") {
  RngStream rng(3);
  Matrix x = sample(rng, StandardNormal{}, 6, 9);
  for (double shift : {-1e3, 0.0, 1e3}) {
    const Matrix xs = (x.array() + shift).matrix();
    const Matrix s = ad::softmax_value(xs, Axis::Cols);
    CHECK((s.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    const Matrix l = ad::logsumexp_value(xs, Axis::Cols);
    CHECK(l.allFinite());
    CHECK((l.array() - shift - ad::logsumexp_value(x, Axis::Cols).array()).abs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("batch norm inference uses frozen running statistics") {
  ad::Tape t;
  ad::BatchNormStats stats{row({1.0, -2.0}), row({4.0, 0.25})};
  const Matrix x = (Matrix(3, 2) << 1, 0, 3, -2, 5, 1).finished();
  ad::Var gamma = t.constant(row({1, 1}));
  ad::Var beta = t.constant(row({0, 0}));
  const Matrix y1 = ad::batch_norm(t.constant(x), gamma, beta, stats, false).value();
  const Matrix y2 = ad::batch_norm(t.constant(x.topRows(1)), gamma, beta, stats, false).value();
  CHECK(stats.running_mean == row({1.0, -2.0}));
  CHECK(y1.row(0) == y2.row(0));
  CHECK(y1(1, 0) == doctest::Approx(2.0 / std::sqrt(4.0 + 1e-5)));

  ad::batch_norm(t.constant(x), gamma, beta, stats, true);
  CHECK(stats.running_mean(0, 0) == doctest::Approx(0.9 * 1.0 + 0.1 * 3.0));
}

}  // TEST_SUITE

TEST_SUITE("adam") {

TEST_CASE("first step moves each parameter by about the learning rate") {
  Parameter p{"w", row({1.0, -2.0, 0.5})};
  std::vector<Parameter*> ps{&p};
  std::vector<Matrix> g{row({0.3, -7.0, 1e-3})};
  AdamState s;
  adam_step(ps, g, s);
  CHECK(p.value(0, 0) == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
  CHECK(p.value(0, 1) == doctest::Approx(-2.0 + 1e-3).epsilon(1e-6));
  CHECK(std::abs(p.value(0, 2) - 0.5) == doctest::Approx(1e-3).epsilon(1e-4));
  CHECK(s.step == 1);
}

TEST_CASE("learning rate decays by 0.96 every 1000 updates") {
  AdamState s;
  CHECK(s.effective_lr(0) == 1e-3);
  CHECK(s.effective_lr(999) == 1e-3);
  CHECK(s.effective_lr(1000) == doctest::Approx(0.96e-3).epsilon(1e-15));
  CHECK(s.effective_lr(2500) == doctest::Approx(0.96 * 0.96e-3).epsilon(1e-15));
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  Parameter p{"w", row({1.0, 2.0})};
  std::vector<Parameter*> ps{&p};
  std::vector<Matrix> g{Matrix::Zero(1, 2)};
  AdamState s;
  adam_step(ps, g, s);
  CHECK(p.value == row({1.0, 2.0}));
}

TEST_CASE("missing or misshapen gradients are rejected") {
  Parameter p{"w", row({1.0, 2.0})};
  std::vector<Parameter*> ps{&p};
  AdamState s;
  std::vector<Matrix> none{Matrix()};
  CHECK_THROWS_AS(adam_step(ps, none, s), std::invalid_argument);
  std::vector<Matrix> wrong{Matrix::Zero(2, 1)};
  CHECK_THROWS_AS(adam_step(ps, wrong, s), ShapeError);
  std::vector<Matrix> empty;
  CHECK_THROWS_AS(adam_step(ps, empty, s), std::invalid_argument);
}

}  // TEST_SUITE
