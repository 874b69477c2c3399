#include "mvbed/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace mvbed {

std::string shape_string(Index rows, Index cols) {
  std::ostringstream os;
  os << "[" << rows << ", " << cols << "]";
  return os.str();
}

namespace ad {

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw std::logic_error("Var: not attached to a tape");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ != nullptr && tape_->requires_grad(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("Var::scalar: expected [1, 1], got " + shape_string(v.rows(), v.cols()));
  return v(0, 0);
}

bool Gradients::has(const Var& v) const {
  auto i = static_cast<std::size_t>(v.id());
  return v.id() >= 0 && i < grads_.size() && grads_[i].size() > 0;
}

const Matrix& Gradients::operator[](const Var& v) const {
  if (!has(v)) throw std::out_of_range("Gradients: no gradient recorded for node " + std::to_string(v.id()));
  return grads_[static_cast<std::size_t>(v.id())];
}

Var Tape::leaf(Matrix value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), requires_grad, {}, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Matrix value, std::vector<int> inputs, BackwardFn backward) {
  bool rg = false;
  for (int in : inputs) rg = rg || requires_grad(in);
  nodes_.push_back(Node{std::move(value), rg, std::move(inputs), rg ? std::move(backward) : BackwardFn{}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Gradients Tape::backward(const Var& loss) const {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss is not on this tape");
  const Matrix& lv = value(loss.id());
  if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_string(lv.rows(), lv.cols()));

  std::vector<Matrix> grads(nodes_.size());
  if (!requires_grad(loss.id())) return Gradients(std::move(grads));
  grads[static_cast<std::size_t>(loss.id())] = Matrix::Ones(1, 1);

  for (int id = loss.id(); id >= 0; --id) {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    Matrix& g = grads[static_cast<std::size_t>(id)];
    if (g.size() == 0 || !node.backward) continue;
    node.backward(*this, g, grads);
  }
  return Gradients(std::move(grads));
}

namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw std::logic_error("autodiff: operand is not attached to a tape");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::logic_error("autodiff: operands live on different tapes");
  return tape_of(a);
}

Index broadcast_dim(Index x, Index y, const char* op, const Matrix& a, const Matrix& b) {
  if (x == y || y == 1) return x;
  if (x == 1) return y;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(a.rows(), a.cols()) + " with " +
                   shape_string(b.rows(), b.cols()));
}

// Elementwise f(a, b) over the broadcast shape [rows, cols]. Each operand
// is either full-size or has extent 1 along a dimension.
template <typename F>
Matrix broadcast_eval(const Matrix& a, const Matrix& b, Index rows, Index cols, F f) {
  Matrix out(rows, cols);
  const bool a_full = a.cols() == cols, b_full = b.cols() == cols;
  for (Index i = 0; i < rows; ++i) {
    const double* pa = a.data() + (a.rows() == 1 ? 0 : i) * a.cols();
    const double* pb = b.data() + (b.rows() == 1 ? 0 : i) * b.cols();
    double* po = out.data() + i * cols;
    if (a_full && b_full) {
      for (Index j = 0; j < cols; ++j) po[j] = f(pa[j], pb[j]);
    } else if (a_full) {
      const double vb = pb[0];
      for (Index j = 0; j < cols; ++j) po[j] = f(pa[j], vb);
    } else if (b_full) {
      const double va = pa[0];
      for (Index j = 0; j < cols; ++j) po[j] = f(va, pb[j]);
    } else {
      const double v = f(pa[0], pb[0]);
      for (Index j = 0; j < cols; ++j) po[j] = v;
    }
  }
  return out;
}

// Sums a broadcast gradient back down to the operand's shape.
Matrix reduce_to(Matrix g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && g.rows() != 1) {
    Matrix acc = g.row(0);
    for (Index i = 1; i < g.rows(); ++i) acc += g.row(i);
    g = std::move(acc);
  }
  if (cols == 1 && g.cols() != 1) g = g.rowwise().sum().eval();
  return g;
}

template <typename Forward, typename Backward>
Var unary(const Var& a, Forward forward, Backward backward) {
  Tape& t = tape_of(a);
  Matrix out = forward(a.value());
  const int ia = a.id(), iy = static_cast<int>(t.size());
  return t.record(std::move(out), {ia}, [ia, iy, backward](const Tape& tp, const Matrix& g, std::vector<Matrix>& grads) {
    tp.accumulate(grads, ia, backward(g, tp.value(ia), tp.value(iy)));
  });
}

// Column sums of a row-major matrix, accumulated row by row.
Matrix column_sums(const Matrix& x) {
  Matrix acc = Matrix::Zero(1, x.cols());
  for (Index i = 0; i < x.rows(); ++i) acc += x.row(i);
  return acc;
}

enum class BinaryOp { Add, Sub, Mul, Div };

Var binary(BinaryOp op, const char* name, const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Index r = broadcast_dim(av.rows(), bv.rows(), name, av, bv);
  const Index c = broadcast_dim(av.cols(), bv.cols(), name, av, bv);
  Matrix out;
  switch (op) {
    case BinaryOp::Add: out = broadcast_eval(av, bv, r, c, [](double x, double y) { return x + y; }); break;
    case BinaryOp::Sub: out = broadcast_eval(av, bv, r, c, [](double x, double y) { return x - y; }); break;
    case BinaryOp::Mul: out = broadcast_eval(av, bv, r, c, [](double x, double y) { return x * y; }); break;
    case BinaryOp::Div: out = broadcast_eval(av, bv, r, c, [](double x, double y) { return x / y; }); break;
  }
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, op](const Tape& tp, const Matrix& g, std::vector<Matrix>& grads) {
    const Matrix& av = tp.value(ia);
    const Matrix& bv = tp.value(ib);
    const Index r = g.rows(), c = g.cols();
    if (tp.requires_grad(ia)) {
      Matrix ga;
      switch (op) {
        case BinaryOp::Add:
        case BinaryOp::Sub: ga = g; break;
        case BinaryOp::Mul: ga = broadcast_eval(g, bv, r, c, [](double x, double y) { return x * y; }); break;
        case BinaryOp::Div: ga = broadcast_eval(g, bv, r, c, [](double x, double y) { return x / y; }); break;
      }
      tp.accumulate(grads, ia, reduce_to(std::move(ga), av.rows(), av.cols()));
    }
    if (tp.requires_grad(ib)) {
      Matrix gb;
      switch (op) {
        case BinaryOp::Add: gb = g; break;
        case BinaryOp::Sub: gb = -g; break;
        case BinaryOp::Mul: gb = broadcast_eval(g, av, r, c, [](double x, double y) { return x * y; }); break;
        case BinaryOp::Div: {
          Matrix ga = broadcast_eval(g, av, r, c, [](double x, double y) { return x * y; });
          gb = broadcast_eval(ga, bv, r, c, [](double x, double y) { return -x / (y * y); });
          break;
        }
      }
      tp.accumulate(grads, ib, reduce_to(std::move(gb), bv.rows(), bv.cols()));
    }
  });
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary(BinaryOp::Add, "add", a, b); }

Var sub(const Var& a, const Var& b) { return binary(BinaryOp::Sub, "sub", a, b); }

Var mul(const Var& a, const Var& b) { return binary(BinaryOp::Mul, "mul", a, b); }

Var div(const Var& a, const Var& b) {
  if ((b.value().array() == 0.0).any()) throw DomainError("div: zero divisor in operand of shape " + shape_string(b.rows(), b.cols()));
  return binary(BinaryOp::Div, "div", a, b);
}

Var neg(const Var& a) {
  return unary(a, [](const Matrix& x) -> Matrix { return -x; },
               [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return -g; });
}

Var scale(const Var& a, double factor) {
  return unary(a, [factor](const Matrix& x) -> Matrix { return x * factor; },
               [factor](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return g * factor; });
}

Var shift(const Var& a, double offset) {
  return unary(a, [offset](const Matrix& x) -> Matrix { return (x.array() + offset).matrix(); },
               [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return g; });
}

Var exp(const Var& a) {
  return unary(a, [](const Matrix& x) -> Matrix { return x.array().exp().matrix(); },
               [](const Matrix& g, const Matrix&, const Matrix& y) -> Matrix { return g.cwiseProduct(y); });
}

Var log(const Var& a) {
  if ((a.value().array() <= 0.0).any()) throw DomainError("log: non-positive entry in operand of shape " + shape_string(a.rows(), a.cols()));
  return unary(a, [](const Matrix& x) -> Matrix { return x.array().log().matrix(); },
               [](const Matrix& g, const Matrix& x, const Matrix&) -> Matrix { return g.cwiseQuotient(x); });
}

Var square(const Var& a) {
  return unary(a, [](const Matrix& x) -> Matrix { return x.array().square().matrix(); },
               [](const Matrix& g, const Matrix& x, const Matrix&) -> Matrix { return 2.0 * g.cwiseProduct(x); });
}

// relu'(0) = 0.
Var relu(const Var& a) {
  return unary(a, [](const Matrix& x) -> Matrix { return x.cwiseMax(0.0); },
               [](const Matrix& g, const Matrix& x, const Matrix&) -> Matrix {
                 return (x.array() > 0.0).select(g, 0.0).matrix();
               });
}

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_string(a.rows(), a.cols()) + " x " +
                     shape_string(b.rows(), b.cols()));
  }
  Matrix out = a.value() * b.value();
  int ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](const Tape& tp, const Matrix& g, std::vector<Matrix>& grads) {
    if (tp.requires_grad(ia)) tp.accumulate(grads, ia, g * tp.value(ib).transpose());
    if (tp.requires_grad(ib)) tp.accumulate(grads, ib, tp.value(ia).transpose() * g);
  });
}

Var transpose(const Var& a) {
  return unary(a, [](const Matrix& x) -> Matrix { return x.transpose(); },
               [](const Matrix& g, const Matrix&, const Matrix&) -> Matrix { return g.transpose(); });
}

Var sum(const Var& a, Axis axis) {
  if (axis == Axis::Rows) {
    return unary(a, [](const Matrix& x) -> Matrix { return x.colwise().sum(); },
                 [](const Matrix& g, const Matrix& x, const Matrix&) -> Matrix { return g.replicate(x.rows(), 1); });
  }
  return unary(a, [](const Matrix& x) -> Matrix { return x.rowwise().sum(); },
               [](const Matrix& g, const Matrix& x, const Matrix&) -> Matrix { return g.replicate(1, x.cols()); });
}

Var mean(const Var& a, Axis axis) {
  double n = static_cast<double>(axis == Axis::Rows ? a.rows() : a.cols());
  return scale(sum(a, axis), 1.0 / n);
}

Var sum(const Var& a) {
  return unary(a, [](const Matrix& x) -> Matrix { return Matrix::Constant(1, 1, x.sum()); },
               [](const Matrix& g, const Matrix& x, const Matrix&) -> Matrix {
                 return Matrix::Constant(x.rows(), x.cols(), g(0, 0));
               });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Matrix logsumexp_value(const Matrix& a, Axis axis) {
  if (axis == Axis::Cols) {
    Matrix out(a.rows(), 1);
    for (Index i = 0; i < a.rows(); ++i) {
      double m = a.row(i).maxCoeff();
      if (!std::isfinite(m)) {
        out(i, 0) = m;
        continue;
      }
      out(i, 0) = m + std::log((a.row(i).array() - m).exp().sum());
    }
    return out;
  }
  return logsumexp_value(a.transpose(), Axis::Cols).transpose();
}

Matrix softmax_value(const Matrix& a, Axis axis) {
  Matrix lse = logsumexp_value(a, axis);
  if (axis == Axis::Cols) {
    Matrix out(a.rows(), a.cols());
    for (Index i = 0; i < a.rows(); ++i) out.row(i) = (a.row(i).array() - lse(i, 0)).exp().matrix();
    return out;
  }
  return (a - lse.replicate(a.rows(), 1)).array().exp().matrix();
}

Var logsumexp(const Var& a, Axis axis) {
  return unary(a, [axis](const Matrix& x) -> Matrix { return logsumexp_value(x, axis); },
               [axis](const Matrix& g, const Matrix& x, const Matrix& y) -> Matrix {
                 if (axis == Axis::Cols) {
                   Matrix p = (x - y.replicate(1, x.cols())).array().exp().matrix();
                   return p.cwiseProduct(g.replicate(1, x.cols()));
                 }
                 Matrix p = (x - y.replicate(x.rows(), 1)).array().exp().matrix();
                 return p.cwiseProduct(g.replicate(x.rows(), 1));
               });
}

Var softmax(const Var& a, Axis axis) {
  return unary(a, [axis](const Matrix& x) -> Matrix { return softmax_value(x, axis); },
               [axis](const Matrix& g, const Matrix&, const Matrix& p) -> Matrix {
                 Matrix gp = g.cwiseProduct(p);
                 if (axis == Axis::Cols) {
                   Matrix s = gp.rowwise().sum();
                   return gp - p.cwiseProduct(s.replicate(1, p.cols()));
                 }
                 Matrix s = gp.colwise().sum();
                 return gp - p.cwiseProduct(s.replicate(p.rows(), 1));
               });
}

Var gather_rows(const Var& a, const std::vector<Index>& rows) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= x.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " + shape_string(x.rows(), x.cols()));
    }
    out.row(static_cast<Index>(i)) = x.row(rows[i]);
  }
  int ia = a.id();
  return t.record(std::move(out), {ia}, [ia, rows](const Tape& tp, const Matrix& g, std::vector<Matrix>& grads) {
    const Matrix& x = tp.value(ia);
    Matrix ga = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Index>(i));
    tp.accumulate(grads, ia, ga);
  });
}

Var concat(const std::vector<Var>& parts, Axis axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Tape& t = tape_of(parts.front());
  Index rows = 0, cols = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw std::logic_error("concat: operands live on different tapes");
    if (axis == Axis::Rows) {
      if (p.cols() != parts.front().cols()) {
        throw ShapeError("concat: column mismatch " + shape_string(parts.front().rows(), parts.front().cols()) + " vs " +
                         shape_string(p.rows(), p.cols()));
      }
      rows += p.rows();
      cols = p.cols();
    } else {
      if (p.rows() != parts.front().rows()) {
        throw ShapeError("concat: row mismatch " + shape_string(parts.front().rows(), parts.front().cols()) + " vs " +
                         shape_string(p.rows(), p.cols()));
      }
      cols += p.cols();
      rows = p.rows();
    }
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  Index offset = 0;
  for (const Var& p : parts) {
    if (axis == Axis::Rows) {
      out.middleRows(offset, p.rows()) = p.value();
      offset += p.rows();
    } else {
      out.middleCols(offset, p.cols()) = p.value();
      offset += p.cols();
    }
    ids.push_back(p.id());
  }
  return t.record(std::move(out), ids, [ids, axis](const Tape& tp, const Matrix& g, std::vector<Matrix>& grads) {
    Index off = 0;
    for (int id : ids) {
      const Matrix& v = tp.value(id);
      if (axis == Axis::Rows) {
        tp.accumulate(grads, id, g.middleRows(off, v.rows()));
        off += v.rows();
      } else {
        tp.accumulate(grads, id, g.middleCols(off, v.cols()));
        off += v.cols();
      }
    }
  });
}

Var diagonal(const Var& a) {
  if (a.rows() != a.cols()) throw ShapeError("diagonal: expected a square operand, got " + shape_string(a.rows(), a.cols()));
  return unary(a, [](const Matrix& x) -> Matrix { return x.diagonal(); },
               [](const Matrix& g, const Matrix& x, const Matrix&) -> Matrix {
                 Matrix out = Matrix::Zero(x.rows(), x.cols());
                 out.diagonal() = g.col(0);
                 return out;
               });
}

Var straight_through(const Var& a, Matrix forward) {
  if (forward.rows() != a.rows() || forward.cols() != a.cols()) {
    throw ShapeError("straight_through: forward value " + shape_string(forward.rows(), forward.cols()) +
                     " does not match operand " + shape_string(a.rows(), a.cols()));
  }
  Tape& t = tape_of(a);
  int ia = a.id();
  return t.record(std::move(forward), {ia}, [ia](const Tape& tp, const Matrix& g, std::vector<Matrix>& grads) {
    tp.accumulate(grads, ia, g);
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, bool training) {
  Tape& t = tape_of(x, gamma);
  if (gamma.tape() != beta.tape()) throw std::logic_error("batch_norm: operands live on different tapes");
  const Index n = x.rows();
  const Index f = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != f || beta.rows() != 1 || beta.cols() != f) {
    throw ShapeError("batch_norm: affine parameters " + shape_string(gamma.rows(), gamma.cols()) + " / " +
                     shape_string(beta.rows(), beta.cols()) + " do not match input " + shape_string(n, f));
  }
  if (stats.running_mean.size() == 0) {
    stats.running_mean = Matrix::Zero(1, f);
    stats.running_var = Matrix::Ones(1, f);
  }
  if (stats.running_mean.cols() != f) {
    throw ShapeError("batch_norm: running statistics " + shape_string(1, stats.running_mean.cols()) +
                     " do not match input " + shape_string(n, f));
  }

  const Matrix& xv = x.value();
  RowVector mu, var;
  if (training) {
    if (n < 2) throw ShapeError("batch_norm: training mode needs at least 2 rows, got " + shape_string(n, f));
    mu = column_sums(xv) / static_cast<double>(n);
    var = RowVector::Zero(f);
    for (Index i = 0; i < n; ++i) var.array() += (xv.row(i) - mu).array().square();
    var /= static_cast<double>(n);
    const double unbiased = static_cast<double>(n) / static_cast<double>(n - 1);
    stats.running_mean = (1.0 - stats.momentum) * stats.running_mean + stats.momentum * mu;
    stats.running_var = (1.0 - stats.momentum) * stats.running_var + stats.momentum * unbiased * var;
  } else {
    mu = stats.running_mean;
    var = stats.running_var;
  }
  const RowVector inv_std = (var.array() + stats.eps).rsqrt().matrix();
  const RowVector gv = gamma.value(), bv = beta.value();
  Matrix xhat(n, f), out(n, f);
  for (Index i = 0; i < n; ++i) {
    xhat.row(i) = ((xv.row(i) - mu).array() * inv_std.array()).matrix();
    out.row(i) = (xhat.row(i).array() * gv.array() + bv.array()).matrix();
  }

  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return t.record(std::move(out), {ix, ig, ib},
                  [ix, ig, ib, xhat = std::move(xhat), inv_std, training](const Tape& tp, const Matrix& g,
                                                                         std::vector<Matrix>& grads) {
                    const Index rows = g.rows();
                    RowVector sum_g = RowVector::Zero(g.cols()), sum_gx = RowVector::Zero(g.cols());
                    for (Index i = 0; i < rows; ++i) {
                      sum_g += g.row(i);
                      sum_gx.array() += g.row(i).array() * xhat.row(i).array();
                    }
                    tp.accumulate(grads, ig, sum_gx);
                    tp.accumulate(grads, ib, sum_g);
                    if (!tp.requires_grad(ix)) return;
                    const RowVector gamma_v = tp.value(ig);
                    const RowVector scale = (gamma_v.array() * inv_std.array()).matrix();
                    Matrix gx(rows, g.cols());
                    if (!training) {
                      for (Index i = 0; i < rows; ++i) gx.row(i) = (g.row(i).array() * scale.array()).matrix();
                    } else {
                      // Batch statistics: subtract the mean gradient and its projection on xhat.
                      const RowVector mean_g = sum_g / static_cast<double>(rows);
                      const RowVector mean_gx = sum_gx / static_cast<double>(rows);
                      for (Index i = 0; i < rows; ++i) {
                        gx.row(i) = ((g.row(i) - mean_g).array() - xhat.row(i).array() * mean_gx.array()).matrix();
                        gx.row(i).array() *= scale.array();
                      }
                    }
                    tp.accumulate(grads, ix, gx);
                  });
}

}  // namespace ad
}  // namespace mvbed
