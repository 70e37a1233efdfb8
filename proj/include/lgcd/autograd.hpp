#pragma once
// Minimal tape-free reverse-mode automatic differentiation over Matrix.
//
// Every op allocates a node holding its value, its inputs and a closure that
// scatters the node's gradient into the inputs. backward() orders the graph
// reachable from a scalar loss topologically and runs the closures in
// reverse. Under NoGradGuard ops only compute values.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "lgcd/matrix.hpp"

namespace lgcd::ag {

struct Node {
  Matrix value;
  Matrix grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Matrix& grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Matrix(value.rows(), value.cols());
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Matrix(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double item() const;
  const std::shared_ptr<Node>& node() const noexcept { return node_; }
  explicit operator bool() const noexcept { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled() noexcept;

Var constant(Matrix value);
/// Trainable leaf; gradients accumulate across backward() calls.
Var leaf(Matrix value);
Var detach(const Var& x);

/// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be 1 x 1.
void backward(const Var& loss);

// --- linear algebra ---------------------------------------------------------
Var matmul(const Var& a, const Var& b);     // a[n,k] b[k,m]
Var matmul_nt(const Var& a, const Var& b);  // a[n,k] b[m,k]^T
/// x[n,in] W[out,in]^T + b[1,out]; `b` may be empty.
Var linear(const Var& x, const Var& w, const Var& b = Var());

// --- elementwise ------------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// a[n,m] + row[1,m] broadcast over rows.
Var add_row(const Var& a, const Var& row);
Var scale(const Var& a, double s);
Var gelu(const Var& a);
Var relu(const Var& a);

// --- structure --------------------------------------------------------------
Var concat_cols(const Var& a, const Var& b);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(const Var& a, std::size_t start, std::size_t len);
Var slice_rows(const Var& a, std::size_t start, std::size_t len);
Var gather_rows(const Var& table, std::span<const std::uint32_t> rows);

// --- normalisation / attention ---------------------------------------------
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
/// Row softmax; entries with mask == 0 get probability 0. `mask` is empty or
/// rows*cols. Every row must keep at least one entry.
Var masked_softmax_rows(const Var& scores, std::span<const std::uint8_t> mask = {});

// --- reductions / losses ----------------------------------------------------
Var sum(const Var& a);
Var squared_norm(const Var& a);
/// Mean of squared differences over all elements.
Var mse(const Var& a, const Var& b);
/// -log softmax(logits)[target] for a 1 x n logits row.
Var cross_entropy(const Var& logits, std::size_t target);
/// Sum over rows of -log softmax(logits[r])[targets[r]].
Var cross_entropy_rows(const Var& logits, std::span<const std::size_t> targets);
/// Per-row sums, rows x 1.
Var row_sum(const Var& a);
/// Row r of `a` multiplied by w(r, 0).
Var scale_rows(const Var& a, const Var& w);
Var add_scalars(std::span<const Var> terms);

}  // namespace lgcd::ag
