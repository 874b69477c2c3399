// Reverse-mode automatic differentiation over dense row-major matrices.
//
// Every array in the library is rank <= 2: scalars are 1x1, a batch of
// vectors is [rows = batch, cols = features]. Primitives record themselves
// on a Tape together with a backward rule; Tape::backward replays the
// record in reverse and returns a fresh Gradients object, so the tape can
// be differentiated any number of times.

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvbed {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Non-finite values during optimisation or inference.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_string(Index rows, Index cols);

namespace ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index size() const { return value().size(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

  // Convenience for 1x1 nodes.
  double scalar() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Gradients {
 public:
  explicit Gradients(std::vector<Matrix> grads) : grads_(std::move(grads)) {}

  bool has(const Var& v) const;
  // Throws std::out_of_range when v received no gradient.
  const Matrix& operator[](const Var& v) const;

 private:
  std::vector<Matrix> grads_;
};

using BackwardFn = std::function<void(const Tape&, const Matrix& grad_out, std::vector<Matrix>& grads)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value, bool requires_grad = true);
  Var constant(Matrix value) { return leaf(std::move(value), false); }
  Var scalar(double value) { return constant(Matrix::Constant(1, 1, value)); }

  // Records an operation. requires_grad is inherited from the inputs.
  Var record(Matrix value, std::vector<int> inputs, BackwardFn backward);

  Gradients backward(const Var& loss) const;

  std::size_t size() const { return nodes_.size(); }
  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  // Adds contribution into grads[id] when that node takes gradients.
  template <typename Derived>
  void accumulate(std::vector<Matrix>& grads, int id, const Eigen::MatrixBase<Derived>& contribution) const {
    if (!requires_grad(id)) return;
    Matrix& g = grads[static_cast<std::size_t>(id)];
    // Contributions never read the gradient buffer they are added into.
    if (g.size() == 0) {
      g.noalias() = contribution;
    } else {
      g.noalias() += contribution;
    }
  }

 private:
  struct Node {
    Matrix value;
    bool requires_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
};

enum class Axis { Rows = 0, Cols = 1 };

// Elementwise arithmetic. Operands broadcast when a dimension is 1.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double factor);
Var shift(const Var& a, double offset);

Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var relu(const Var& a);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

// Reductions: Axis::Rows collapses the row dimension (result 1 x cols),
// Axis::Cols collapses the column dimension (result rows x 1).
Var sum(const Var& a, Axis axis);
Var mean(const Var& a, Axis axis);
Var sum(const Var& a);
Var mean(const Var& a);
Var logsumexp(const Var& a, Axis axis);
Var softmax(const Var& a, Axis axis);

Var gather_rows(const Var& a, const std::vector<Index>& rows);
Var concat(const std::vector<Var>& parts, Axis axis);
Var diagonal(const Var& a);

// Forward value is `forward`, gradient passes to `a` unchanged.
Var straight_through(const Var& a, Matrix forward);

struct BatchNormStats {
  Matrix running_mean;  // 1 x F
  Matrix running_var;   // 1 x F
  double momentum = 0.1;
  double eps = 1e-5;
};

// Normalises each column over the batch. In training mode batch statistics
// are used and `stats` is updated; otherwise the running statistics are used.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, bool training);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return shift(a, s); }
inline Var operator-(const Var& a, double s) { return shift(a, -s); }

// Numerically stable row/column helpers on plain matrices.
Matrix logsumexp_value(const Matrix& a, Axis axis);
Matrix softmax_value(const Matrix& a, Axis axis);

}  // namespace ad
}  // namespace mvbed
