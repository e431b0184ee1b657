#include "rtrans/autodiff.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace rtrans::ad {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << "(" << m.rows() << "x" << m.cols() << ")";
  return os.str();
}

void require(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) {
    throw ShapeMismatchError(std::string(op) + ": " + shape_str(a) + " vs " +
                             shape_str(b));
  }
}

}  // namespace

const Matrix& Var::value() const { return tape->value(id); }
const Matrix& Var::grad() const { return tape->grad(id); }
bool Var::requires_grad() const { return tape->requires_grad(id); }

Var Tape::leaf(Matrix value, bool requires_grad) {
  if (check_finite_ && !value.allFinite()) {
    throw NonFiniteError("leaf value contains NaN/inf");
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Matrix value, std::vector<int> parents,
                 std::function<void(Tape&, int)> backprop, const char* op) {
  if (check_finite_ && !value.allFinite()) {
    throw NonFiniteError(std::string(op) + " produced NaN/inf");
  }
  Node n;
  n.value = std::move(value);
  n.op = op;
  for (int p : parents) {
    if (nodes_[at(p)].requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  n.parents = std::move(parents);
  if (n.requires_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::add_grad(int id, const Matrix& g) {
  Node& n = nodes_[at(id)];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  }
  n.grad += g;
}

BackwardStats Tape::backward(const Var& loss) {
  if (nodes_.empty() || !loss.valid()) {
    throw NonScalarLossError("backward on an empty tape");
  }
  const Matrix& lv = value(loss.id);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw NonScalarLossError("loss has shape " + shape_str(lv) +
                             ", expected (1x1)");
  }
  add_grad(loss.id, Matrix::Ones(1, 1));
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[at(id)];
    if (n.grad.size() == 0 || !n.backprop) continue;
    n.backprop(*this, id);
    if (check_finite_ && !n.grad.allFinite()) {
      throw NonFiniteError(std::string(n.op) + " backward produced NaN/inf");
    }
  }
  BackwardStats stats;
  for (Node& n : nodes_) {
    if (n.requires_grad && !n.backprop && n.grad.size() == 0) {
      n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
      ++stats.unreached_leaves;
    }
  }
  return stats;
}

void Tape::clear() { nodes_.clear(); }

std::string Tape::graph() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    os << i << ": " << n.op << " " << shape_str(n.value);
    if (n.requires_grad) os << " grad";
    if (!n.parents.empty()) {
      os << " <-";
      for (int p : n.parents) os << " " << p;
    }
    os << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  const Matrix &av = a.value(), &bv = b.value();
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), "add", av, bv);
  const int ia = a.id, ib = b.id;
  return a.tape->record(
      av + bv, {ia, ib},
      [ia, ib](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        t.add_grad(ia, g);
        t.add_grad(ib, g);
      },
      "add");
}

Var add_rowvec(const Var& x, const Var& bias) {
  const Matrix &xv = x.value(), &bv = bias.value();
  require(bv.rows() == 1 && bv.cols() == xv.cols(), "add_rowvec", xv, bv);
  Matrix out = xv;
  out.rowwise() += bv.row(0);
  const int ix = x.id, ib = bias.id;
  return x.tape->record(
      std::move(out), {ix, ib},
      [ix, ib](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        t.add_grad(ix, g);
        t.add_grad(ib, g.colwise().sum());
      },
      "add_rowvec");
}

Var mul(const Var& a, const Var& b) {
  const Matrix &av = a.value(), &bv = b.value();
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), "mul", av, bv);
  const int ia = a.id, ib = b.id;
  return a.tape->record(
      av.cwiseProduct(bv), {ia, ib},
      [ia, ib](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        t.add_grad(ia, g.cwiseProduct(t.value(ib)));
        t.add_grad(ib, g.cwiseProduct(t.value(ia)));
      },
      "mul");
}

Var matmul(const Var& a, const Var& b) {
  const Matrix &av = a.value(), &bv = b.value();
  require(av.cols() == bv.rows(), "matmul", av, bv);
  const int ia = a.id, ib = b.id;
  return a.tape->record(
      av * bv, {ia, ib},
      [ia, ib](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        t.add_grad(ia, g * t.value(ib).transpose());
        t.add_grad(ib, t.value(ia).transpose() * g);
      },
      "matmul");
}

Var scale(const Var& a, double s) {
  const int ia = a.id;
  return a.tape->record(
      a.value() * s, {ia},
      [ia, s](Tape& t, int self) { t.add_grad(ia, t.grad(self) * s); },
      "scale");
}

Var transpose(const Var& a) {
  const int ia = a.id;
  return a.tape->record(
      a.value().transpose(), {ia},
      [ia](Tape& t, int self) { t.add_grad(ia, t.grad(self).transpose()); },
      "transpose");
}

Var relu(const Var& a) {
  const int ia = a.id;
  return a.tape->record(
      a.value().cwiseMax(0.0), {ia},
      [ia](Tape& t, int self) {
        const Matrix mask =
            (t.value(ia).array() > 0.0).cast<double>().matrix();
        t.add_grad(ia, t.grad(self).cwiseProduct(mask));
      },
      "relu");
}

namespace {

Matrix softmax_rows_value(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double m = a.row(r).maxCoeff();
    Eigen::ArrayXd e = (a.row(r).array() - m).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  return out;
}

}  // namespace

Var softmax_rows(const Var& a) {
  const int ia = a.id;
  return a.tape->record(
      softmax_rows_value(a.value()), {ia},
      [ia](Tape& t, int self) {
        const Matrix& p = t.value(self);
        const Matrix& g = t.grad(self);
        Matrix gin(p.rows(), p.cols());
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
          const double dot = g.row(r).dot(p.row(r));
          gin.row(r) =
              p.row(r).cwiseProduct(g.row(r) - Matrix::Constant(1, p.cols(), dot));
        }
        t.add_grad(ia, gin);
      },
      "softmax_rows");
}

Var softmax_cols(const Var& a) {
  return transpose(softmax_rows(transpose(a)));
}

Var log_softmax_rows(const Var& a) {
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  for (Eigen::Index r = 0; r < av.rows(); ++r) {
    const double m = av.row(r).maxCoeff();
    const double lse = m + std::log((av.row(r).array() - m).exp().sum());
    out.row(r) = av.row(r).array() - lse;
  }
  const int ia = a.id;
  return a.tape->record(
      std::move(out), {ia},
      [ia](Tape& t, int self) {
        const Matrix p = t.value(self).array().exp().matrix();  // softmax
        const Matrix& g = t.grad(self);
        Matrix gin(p.rows(), p.cols());
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
          gin.row(r) = g.row(r) - p.row(r) * g.row(r).sum();
        }
        t.add_grad(ia, gin);
      },
      "log_softmax_rows");
}

Var log_elem(const Var& a) {
  const int ia = a.id;
  return a.tape->record(
      a.value().array().log().matrix(), {ia},
      [ia](Tape& t, int self) {
        t.add_grad(ia,
                   (t.grad(self).array() / t.value(ia).array()).matrix());
      },
      "log");
}

Var mean_over_rows(const Var& a) {
  const Matrix& av = a.value();
  const int ia = a.id;
  const double inv = 1.0 / static_cast<double>(av.rows());
  return a.tape->record(
      av.colwise().mean(), {ia},
      [ia, inv](Tape& t, int self) {
        const Matrix& g = t.grad(self);  // 1xC
        const Eigen::Index r = t.value(ia).rows();
        t.add_grad(ia, (g * inv).replicate(r, 1));
      },
      "mean_over_rows");
}

Var mean_over_cols(const Var& a) {
  const Matrix& av = a.value();
  const int ia = a.id;
  const double inv = 1.0 / static_cast<double>(av.cols());
  return a.tape->record(
      av.rowwise().mean(), {ia},
      [ia, inv](Tape& t, int self) {
        const Matrix& g = t.grad(self);  // Rx1
        const Eigen::Index c = t.value(ia).cols();
        t.add_grad(ia, (g * inv).replicate(1, c));
      },
      "mean_over_cols");
}

Var sum_all(const Var& a) {
  const int ia = a.id;
  return a.tape->record(
      Matrix::Constant(1, 1, a.value().sum()), {ia},
      [ia](Tape& t, int self) {
        const double g = t.grad(self)(0, 0);
        const Matrix& v = t.value(ia);
        t.add_grad(ia, Matrix::Constant(v.rows(), v.cols(), g));
      },
      "sum_all");
}

Var sum_squares(const Var& a) {
  const int ia = a.id;
  return a.tape->record(
      Matrix::Constant(1, 1, a.value().squaredNorm()), {ia},
      [ia](Tape& t, int self) {
        const double g = t.grad(self)(0, 0);
        t.add_grad(ia, 2.0 * g * t.value(ia));
      },
      "sum_squares");
}

Var slice_cols(const Var& a, int start, int n) {
  const Matrix& av = a.value();
  if (start < 0 || n < 1 || start + n > av.cols()) {
    throw ShapeMismatchError("slice_cols: [" + std::to_string(start) + ", " +
                             std::to_string(start + n) + ") out of " +
                             shape_str(av));
  }
  const int ia = a.id;
  return a.tape->record(
      av.middleCols(start, n), {ia},
      [ia, start, n](Tape& t, int self) {
        const Matrix& v = t.value(ia);
        Matrix padded = Matrix::Zero(v.rows(), v.cols());
        padded.middleCols(start, n) = t.grad(self);
        t.add_grad(ia, padded);
      },
      "slice_cols");
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatchError("concat_cols: no inputs");
  Eigen::Index rows = parts.front().value().rows();
  Eigen::Index cols = 0;
  std::vector<int> ids;
  for (const Var& p : parts) {
    require(p.value().rows() == rows, "concat_cols", parts.front().value(),
            p.value());
    cols += p.value().cols();
    ids.push_back(p.id);
  }
  Matrix out(rows, cols);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, p.value().cols()) = p.value();
    off += p.value().cols();
  }
  return parts.front().tape->record(
      std::move(out), ids,
      [ids](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        Eigen::Index off = 0;
        for (int id : ids) {
          const Eigen::Index c = t.value(id).cols();
          t.add_grad(id, g.middleCols(off, c));
          off += c;
        }
      },
      "concat_cols");
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatchError("concat_rows: no inputs");
  Eigen::Index cols = parts.front().value().cols();
  Eigen::Index rows = 0;
  std::vector<int> ids;
  for (const Var& p : parts) {
    require(p.value().cols() == cols, "concat_rows", parts.front().value(),
            p.value());
    rows += p.value().rows();
    ids.push_back(p.id);
  }
  Matrix out(rows, cols);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleRows(off, p.value().rows()) = p.value();
    off += p.value().rows();
  }
  return parts.front().tape->record(
      std::move(out), ids,
      [ids](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        Eigen::Index off = 0;
        for (int id : ids) {
          const Eigen::Index r = t.value(id).rows();
          t.add_grad(id, g.middleRows(off, r));
          off += r;
        }
      },
      "concat_rows");
}

Var layernorm_rows(const Var& x, const Var& gamma, const Var& beta,
                   double eps) {
  const Matrix& xv = x.value();
  const Matrix &gv = gamma.value(), &bv = beta.value();
  require(gv.rows() == 1 && gv.cols() == xv.cols(), "layernorm_rows", xv, gv);
  require(bv.rows() == 1 && bv.cols() == xv.cols(), "layernorm_rows", xv, bv);

  const Eigen::Index r = xv.rows(), c = xv.cols();
  Matrix xhat(r, c);
  Eigen::VectorXd inv_std(r);
  for (Eigen::Index i = 0; i < r; ++i) {
    const double mu = xv.row(i).mean();
    const double var =
        (xv.row(i).array() - mu).square().sum() / static_cast<double>(c);
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
  }
  Matrix out = xhat.array().rowwise() * gv.row(0).array();
  out.rowwise() += bv.row(0);

  const int ix = x.id, ig = gamma.id, ib = beta.id;
  return x.tape->record(
      std::move(out), {ix, ig, ib},
      [ix, ig, ib, xhat, inv_std](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        const Matrix& gv = t.value(ig);
        const Eigen::Index c = g.cols();
        t.add_grad(ig, g.cwiseProduct(xhat).colwise().sum());
        t.add_grad(ib, g.colwise().sum());
        Matrix h = g.array().rowwise() * gv.row(0).array();
        Matrix gin(g.rows(), c);
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          const double mean_h = h.row(i).mean();
          const double mean_hx =
              h.row(i).cwiseProduct(xhat.row(i)).sum() / static_cast<double>(c);
          gin.row(i) = inv_std(i) * (h.row(i).array() - mean_h -
                                     xhat.row(i).array() * mean_hx);
        }
        t.add_grad(ix, gin);
      },
      "layernorm_rows");
}

Var batchnorm(const Var& x, const Var& gamma, const Var& beta,
              Matrix& running_mean, Matrix& running_var, BatchNormMode mode,
              bool update_running, double eps, double momentum) {
  const Matrix& xv = x.value();
  const Matrix &gv = gamma.value(), &bv = beta.value();
  require(gv.rows() == 1 && gv.cols() == xv.cols(), "batchnorm", xv, gv);
  require(bv.rows() == 1 && bv.cols() == xv.cols(), "batchnorm", xv, bv);
  require(running_mean.rows() == 1 && running_mean.cols() == xv.cols(),
          "batchnorm", xv, running_mean);
  require(running_var.rows() == 1 && running_var.cols() == xv.cols(),
          "batchnorm", xv, running_var);

  const Eigen::Index r = xv.rows(), c = xv.cols();
  Matrix xhat(r, c);
  Eigen::RowVectorXd inv_std(c);

  if (mode == BatchNormMode::Train) {
    const Eigen::RowVectorXd mu = xv.colwise().mean();
    Eigen::RowVectorXd var(c);
    for (Eigen::Index j = 0; j < c; ++j) {
      var(j) = (xv.col(j).array() - mu(j)).square().sum() /
               static_cast<double>(r);
    }
    inv_std = (var.array() + eps).rsqrt();
    xhat = (xv.rowwise() - mu).array().rowwise() * inv_std.array();
    if (update_running) {
      // unbiased variance feeds the running buffer
      const double correction =
          r > 1 ? static_cast<double>(r) / static_cast<double>(r - 1) : 1.0;
      running_mean = (1.0 - momentum) * running_mean + momentum * mu;
      running_var =
          (1.0 - momentum) * running_var + momentum * (var * correction);
    }
    Matrix out = xhat.array().rowwise() * gv.row(0).array();
    out.rowwise() += bv.row(0);

    const int ix = x.id, ig = gamma.id, ib = beta.id;
    return x.tape->record(
        std::move(out), {ix, ig, ib},
        [ix, ig, ib, xhat, inv_std](Tape& t, int self) {
          const Matrix& g = t.grad(self);
          const Matrix& gv = t.value(ig);
          const Eigen::Index r = g.rows();
          t.add_grad(ig, g.cwiseProduct(xhat).colwise().sum());
          t.add_grad(ib, g.colwise().sum());
          Matrix h = g.array().rowwise() * gv.row(0).array();
          Matrix gin(r, g.cols());
          for (Eigen::Index j = 0; j < g.cols(); ++j) {
            const double mean_h = h.col(j).mean();
            const double mean_hx =
                h.col(j).cwiseProduct(xhat.col(j)).sum() /
                static_cast<double>(r);
            gin.col(j) = inv_std(j) * (h.col(j).array() - mean_h -
                                       xhat.col(j).array() * mean_hx);
          }
          t.add_grad(ix, gin);
        },
        "batchnorm_train");
  }

  // eval: affine in x given the running buffers
  inv_std = (running_var.row(0).array() + eps).rsqrt();
  xhat = (xv.rowwise() - running_mean.row(0)).array().rowwise() *
         inv_std.array();
  Matrix out = xhat.array().rowwise() * gv.row(0).array();
  out.rowwise() += bv.row(0);

  const int ix = x.id, ig = gamma.id, ib = beta.id;
  return x.tape->record(
      std::move(out), {ix, ig, ib},
      [ix, ig, ib, xhat, inv_std](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        const Matrix& gv = t.value(ig);
        t.add_grad(ig, g.cwiseProduct(xhat).colwise().sum());
        t.add_grad(ib, g.colwise().sum());
        t.add_grad(ix, (g.array().rowwise() *
                        (gv.row(0).array() * inv_std.array()))
                           .matrix());
      },
      "batchnorm_eval");
}

Var attention(const Var& q, const Var& k, const Var& v) {
  const Matrix &qv = q.value(), &kv = k.value(), &vv = v.value();
  require(qv.cols() == kv.cols(), "attention q/k", qv, kv);
  require(kv.rows() == vv.rows(), "attention k/v", kv, vv);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(qv.cols()));
  Var scores = scale(matmul(q, transpose(k)), inv_sqrt_dk);
  return matmul(softmax_rows(scores), v);
}

double finite_difference_check(const TensorFn& f,
                               const std::vector<Matrix>& inputs,
                               double step) {
  // analytic grads
  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const Matrix& m : inputs) leaves.push_back(tape.leaf(m, true));
    Var y = f(tape, leaves);
    if (y.rows() != 1 || y.cols() != 1) {
      throw NonScalarLossError("finite_difference_check needs a scalar fn");
    }
    tape.backward(y);
    for (const Var& l : leaves) analytic.push_back(l.grad());
  }

  auto eval = [&f](const std::vector<Matrix>& xs) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(xs.size());
    for (const Matrix& m : xs) leaves.push_back(tape.leaf(m, false));
    return f(tape, leaves).value()(0, 0);
  };

  double max_err = 0.0;
  std::vector<Matrix> xs = inputs;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (Eigen::Index r = 0; r < xs[i].rows(); ++r) {
      for (Eigen::Index c = 0; c < xs[i].cols(); ++c) {
        const double orig = xs[i](r, c);
        xs[i](r, c) = orig + step;
        const double fp = eval(xs);
        xs[i](r, c) = orig - step;
        const double fm = eval(xs);
        xs[i](r, c) = orig;
        const double central = (fp - fm) / (2.0 * step);
        const double err = std::abs(analytic[i](r, c) - central) /
                           std::max(1.0, std::abs(central));
        if (err > max_err) max_err = err;
      }
    }
  }
  return max_err;
}

}  // namespace rtrans::ad
