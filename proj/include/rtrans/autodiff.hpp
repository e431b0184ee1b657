#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

#include "rtrans/errors.hpp"

namespace rtrans::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

// Lightweight handle to a node on a tape. Copyable; valid as long as the
// tape is alive and not cleared.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Matrix& value() const;
  const Matrix& grad() const;  // zero-sized until backward touches the node
  bool requires_grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

struct BackwardStats {
  // requires-grad leaves that no gradient reached; their grads are
  // zero-filled and the count reported here as a diagnostic
  int unreached_leaves = 0;
};

// Records a forward computation over dense matrices and replays it in
// reverse for gradients. One tape per forward/backward cycle; a tape is
// confined to a single thread, independent tapes may run concurrently.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value, bool requires_grad = false);
  Var constant(Matrix value) { return leaf(std::move(value), false); }

  // Appends an op node. `backprop(tape, self_id)` must route the node's
  // grad to its parents via add_grad().
  Var record(Matrix value, std::vector<int> parents,
             std::function<void(Tape&, int)> backprop, const char* op);

  // Reverse pass from a scalar loss. Grads of requires-grad leaves stay
  // readable until clear().
  BackwardStats backward(const Var& loss);

  void clear();

  int size() const { return static_cast<int>(nodes_.size()); }
  const Matrix& value(int id) const { return nodes_[at(id)].value; }
  const Matrix& grad(int id) const { return nodes_[at(id)].grad; }
  bool requires_grad(int id) const { return nodes_[at(id)].requires_grad; }

  // Accumulates into the node's grad buffer (no-op for nodes that do not
  // require grad).
  void add_grad(int id, const Matrix& g);

  // When on, every recorded value and every grad produced by backward is
  // checked for NaN/inf (throws NonFiniteError naming the op).
  void set_check_finite(bool on) { check_finite_ = on; }

  // Text dump of the recorded graph, one node per line.
  std::string graph() const;

 private:
  struct Node {
    Matrix value;
    Matrix grad;  // zero-sized until touched
    bool requires_grad = false;
    std::vector<int> parents;
    std::function<void(Tape&, int)> backprop;  // empty for leaves
    const char* op = "leaf";
  };

  std::size_t at(int id) const { return static_cast<std::size_t>(id); }

  std::vector<Node> nodes_;
  bool check_finite_ = false;
};

// ---------------------------------------------------------------------------
// Forward ops (free functions; every op records its backward rule when any
// input requires grad)
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b);                  // same shape
Var add_rowvec(const Var& x, const Var& bias);        // bias 1xC over rows
Var mul(const Var& a, const Var& b);                  // elementwise
Var matmul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var transpose(const Var& a);
Var relu(const Var& a);                               // derivative at 0 is 0
Var softmax_rows(const Var& a);                       // each row sums to 1
Var softmax_cols(const Var& a);
Var log_softmax_rows(const Var& a);
Var log_elem(const Var& a);
Var mean_over_rows(const Var& a);                     // RxC -> 1xC
Var mean_over_cols(const Var& a);                     // RxC -> Rx1
Var sum_all(const Var& a);                            // -> 1x1
Var sum_squares(const Var& a);                        // -> 1x1
Var slice_cols(const Var& a, int start, int n);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }

// Row-wise normalization over the feature axis with per-feature affine
// terms; identical in training and evaluation.
Var layernorm_rows(const Var& x, const Var& gamma, const Var& beta,
                   double eps = 1e-5);

enum class BatchNormMode { Train, Eval };

// Per-feature statistics over the rows (the batch axis). Train mode uses
// batch statistics and, when `update_running` is set, folds them into the
// running buffers with the given momentum; eval mode normalizes with the
// running buffers.
Var batchnorm(const Var& x, const Var& gamma, const Var& beta,
              Matrix& running_mean, Matrix& running_var, BatchNormMode mode,
              bool update_running = true, double eps = 1e-5,
              double momentum = 0.1);

// softmax(Q K^T / sqrt(d_k)) V, composed from the primitives above.
Var attention(const Var& q, const Var& k, const Var& v);

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

// A scalar-valued differentiable function of several matrix inputs.
using TensorFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Max over all input coordinates of
//   |analytic - central_difference| / max(1, |central_difference|).
double finite_difference_check(const TensorFn& f,
                               const std::vector<Matrix>& inputs,
                               double step = 1e-5);

}  // namespace rtrans::ad
