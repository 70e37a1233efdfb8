#include "lgcd/autograd.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include "lgcd/kernels.hpp"

namespace lgcd::ag {

namespace {

thread_local bool g_grad_enabled = true;

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

bool any_requires_grad(std::initializer_list<const Var*> xs) {
  for (const Var* x : xs)
    if (x && x->requires_grad()) return true;
  return false;
}

Var make(Matrix value, std::vector<std::shared_ptr<Node>> inputs,
         std::function<void(Node&)> fn, bool track) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (track && g_grad_enabled) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

void add_into(Matrix& dst, const Matrix& src, double s = 1.0) {
  kernels::axpy(s, src.flat(), dst.flat());
}

}  // namespace

double Var::item() const {
  if (value().rows() != 1 || value().cols() != 1)
    throw std::logic_error("Var::item on non-scalar " + shape_str(value()));
  return value()(0, 0);
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var leaf(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var detach(const Var& x) { return constant(x.value()); }

void backward(const Var& loss) {
  require(loss.rows() == 1 && loss.cols() == 1, "backward: loss must be scalar");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Interior gradients are not needed after the sweep; free them so the graph
  // can be reused for a second backward without double counting.
  for (Node* n : order)
    if (n->backward_fn) n->grad = Matrix();
}

// --- linear algebra ---------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  require(A.cols() == B.rows(), "matmul: inner dimension mismatch");
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  Matrix c(n, m);
  kernels::gemm_nn(A.data(), B.data(), c.data(), n, m, k, false);
  auto an = a.node(), bn = b.node();
  return make(std::move(c), {an, bn},
              [an, bn, n, m, k](Node& self) {
                if (an->requires_grad)
                  kernels::gemm_nt(self.grad.data(), bn->value.data(), an->grad_buffer().data(), n,
                                   k, m, true);
                if (bn->requires_grad)
                  kernels::gemm_tn(an->value.data(), self.grad.data(), bn->grad_buffer().data(), k,
                                   m, n, true);
              },
              any_requires_grad({&a, &b}));
}

Var matmul_nt(const Var& a, const Var& b) {
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  require(A.cols() == B.cols(), "matmul_nt: inner dimension mismatch");
  const std::size_t n = A.rows(), k = A.cols(), m = B.rows();
  Matrix c(n, m);
  kernels::gemm_nt(A.data(), B.data(), c.data(), n, m, k, false);
  auto an = a.node(), bn = b.node();
  return make(std::move(c), {an, bn},
              [an, bn, n, m, k](Node& self) {
                if (an->requires_grad)
                  kernels::gemm_nn(self.grad.data(), bn->value.data(), an->grad_buffer().data(), n,
                                   k, m, true);
                if (bn->requires_grad)
                  kernels::gemm_tn(self.grad.data(), an->value.data(), bn->grad_buffer().data(), m,
                                   k, n, true);
              },
              any_requires_grad({&a, &b}));
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Matrix& X = x.value();
  const Matrix& W = w.value();
  require(X.cols() == W.cols(), "linear: input width mismatch");
  const std::size_t n = X.rows(), in = X.cols(), out = W.rows();
  Matrix y(n, out);
  kernels::gemm_nt(X.data(), W.data(), y.data(), n, out, in, false);
  const bool has_bias = static_cast<bool>(b);
  if (has_bias) {
    require(b.value().size() == out, "linear: bias width mismatch");
    for (std::size_t i = 0; i < n; ++i) kernels::axpy(1.0, b.value().flat(), y.row(i));
  }
  auto xn = x.node(), wn = w.node();
  auto bn = has_bias ? b.node() : nullptr;
  std::vector<std::shared_ptr<Node>> inputs{xn, wn};
  if (bn) inputs.push_back(bn);
  return make(std::move(y), std::move(inputs),
              [xn, wn, bn, n, in, out](Node& self) {
                if (xn->requires_grad)
                  kernels::gemm_nn(self.grad.data(), wn->value.data(), xn->grad_buffer().data(), n,
                                   in, out, true);
                if (wn->requires_grad)
                  kernels::gemm_tn(self.grad.data(), xn->value.data(), wn->grad_buffer().data(),
                                   out, in, n, true);
                if (bn && bn->requires_grad) {
                  Matrix& db = bn->grad_buffer();
                  for (std::size_t i = 0; i < n; ++i) kernels::axpy(1.0, self.grad.row(i), db.flat());
                }
              },
              any_requires_grad({&x, &w, has_bias ? &b : nullptr}));
}

// --- elementwise ------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "add: shape mismatch");
  Matrix c = a.value();
  add_into(c, b.value());
  auto an = a.node(), bn = b.node();
  return make(std::move(c), {an, bn},
              [an, bn](Node& self) {
                if (an->requires_grad) add_into(an->grad_buffer(), self.grad);
                if (bn->requires_grad) add_into(bn->grad_buffer(), self.grad);
              },
              any_requires_grad({&a, &b}));
}

Var sub(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "sub: shape mismatch");
  Matrix c = a.value();
  add_into(c, b.value(), -1.0);
  auto an = a.node(), bn = b.node();
  return make(std::move(c), {an, bn},
              [an, bn](Node& self) {
                if (an->requires_grad) add_into(an->grad_buffer(), self.grad);
                if (bn->requires_grad) add_into(bn->grad_buffer(), self.grad, -1.0);
              },
              any_requires_grad({&a, &b}));
}

Var mul(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "mul: shape mismatch");
  Matrix c = a.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b.value()[i];
  auto an = a.node(), bn = b.node();
  return make(std::move(c), {an, bn},
              [an, bn](Node& self) {
                if (an->requires_grad) {
                  Matrix& g = an->grad_buffer();
                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
                }
                if (bn->requires_grad) {
                  Matrix& g = bn->grad_buffer();
                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
                }
              },
              any_requires_grad({&a, &b}));
}

Var add_row(const Var& a, const Var& row) {
  require(row.value().rows() == 1 && row.value().cols() == a.cols(), "add_row: shape mismatch");
  Matrix c = a.value();
  for (std::size_t i = 0; i < c.rows(); ++i) kernels::axpy(1.0, row.value().flat(), c.row(i));
  auto an = a.node(), rn = row.node();
  return make(std::move(c), {an, rn},
              [an, rn](Node& self) {
                if (an->requires_grad) add_into(an->grad_buffer(), self.grad);
                if (rn->requires_grad) {
                  Matrix& g = rn->grad_buffer();
                  for (std::size_t i = 0; i < self.grad.rows(); ++i)
                    kernels::axpy(1.0, self.grad.row(i), g.flat());
                }
              },
              any_requires_grad({&a, &row}));
}

Var scale(const Var& a, double s) {
  Matrix c = a.value();
  for (double& v : c.flat()) v *= s;
  auto an = a.node();
  return make(std::move(c), {an},
              [an, s](Node& self) { add_into(an->grad_buffer(), self.grad, s); },
              a.requires_grad());
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(const Var& a) {
  Matrix c = a.value();
  for (double& v : c.flat()) {
    const double x = v;
    v = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  }
  auto an = a.node();
  return make(std::move(c), {an},
              [an](Node& self) {
                Matrix& g = an->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) {
                  const double x = an->value[i];
                  const double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
                  const double d = 0.5 * (1.0 + th) +
                                   0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
                  g[i] += self.grad[i] * d;
                }
              },
              a.requires_grad());
}

Var relu(const Var& a) {
  Matrix c = a.value();
  for (double& v : c.flat()) v = v > 0.0 ? v : 0.0;
  auto an = a.node();
  return make(std::move(c), {an},
              [an](Node& self) {
                Matrix& g = an->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i)
                  if (an->value[i] > 0.0) g[i] += self.grad[i];
              },
              a.requires_grad());
}

// --- structure --------------------------------------------------------------

Var concat_cols(const Var& a, const Var& b) {
  require(a.rows() == b.rows(), "concat_cols: row mismatch");
  const std::size_t n = a.rows(), ca = a.cols(), cb = b.cols();
  Matrix c(n, ca + cb);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.value().row(i).data(), ca, c.row(i).data());
    std::copy_n(b.value().row(i).data(), cb, c.row(i).data() + ca);
  }
  auto an = a.node(), bn = b.node();
  return make(std::move(c), {an, bn},
              [an, bn, n, ca, cb](Node& self) {
                for (std::size_t i = 0; i < n; ++i) {
                  const double* src = self.grad.row(i).data();
                  if (an->requires_grad)
                    kernels::axpy(1.0, {src, ca}, an->grad_buffer().row(i));
                  if (bn->requires_grad)
                    kernels::axpy(1.0, {src + ca, cb}, bn->grad_buffer().row(i));
                }
              },
              any_requires_grad({&a, &b}));
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  bool track = false;
  std::vector<std::shared_ptr<Node>> inputs;
  for (const Var& p : parts) {
    require(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
    track = track || p.requires_grad();
    inputs.push_back(p.node());
  }
  Matrix c(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), c.data() + offset * cols);
    offset += p.rows();
  }
  auto captured = inputs;
  return make(std::move(c), std::move(inputs),
              [captured, cols](Node& self) {
                std::size_t off = 0;
                for (const auto& in : captured) {
                  const std::size_t len = in->value.rows() * cols;
                  if (in->requires_grad)
                    kernels::axpy(1.0, {self.grad.data() + off * cols, len},
                                  in->grad_buffer().flat());
                  off += in->value.rows();
                }
              },
              track);
}

Var slice_cols(const Var& a, std::size_t start, std::size_t len) {
  require(start + len <= a.cols(), "slice_cols: out of range");
  const std::size_t n = a.rows();
  Matrix c(n, len);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(a.value().row(i).data() + start, len, c.row(i).data());
  auto an = a.node();
  return make(std::move(c), {an},
              [an, n, start, len](Node& self) {
                Matrix& g = an->grad_buffer();
                for (std::size_t i = 0; i < n; ++i)
                  kernels::axpy(1.0, self.grad.row(i), {g.row(i).data() + start, len});
              },
              a.requires_grad());
}

Var slice_rows(const Var& a, std::size_t start, std::size_t len) {
  require(start + len <= a.rows(), "slice_rows: out of range");
  const std::size_t cols = a.cols();
  Matrix c(len, cols);
  std::copy_n(a.value().data() + start * cols, len * cols, c.data());
  auto an = a.node();
  return make(std::move(c), {an},
              [an, start, cols](Node& self) {
                kernels::axpy(1.0, self.grad.flat(),
                              {an->grad_buffer().data() + start * cols, self.grad.size()});
              },
              a.requires_grad());
}

Var gather_rows(const Var& table, std::span<const std::uint32_t> rows) {
  const std::size_t cols = table.cols();
  Matrix c(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < table.rows(), "gather_rows: index out of range");
    std::copy_n(table.value().row(rows[i]).data(), cols, c.row(i).data());
  }
  auto tn = table.node();
  std::vector<std::uint32_t> idx(rows.begin(), rows.end());
  return make(std::move(c), {tn},
              [tn, idx = std::move(idx)](Node& self) {
                Matrix& g = tn->grad_buffer();
                for (std::size_t i = 0; i < idx.size(); ++i)
                  kernels::axpy(1.0, self.grad.row(i), g.row(idx[i]));
              },
              table.requires_grad());
}

// --- normalisation / attention ---------------------------------------------

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const std::size_t n = x.rows(), d = x.cols();
  require(gain.value().size() == d && bias.value().size() == d, "layer_norm: param width");
  Matrix y(n, d);
  Matrix xhat(n, d);
  std::vector<double> inv(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = x.value().row(i);
    double mu = 0.0;
    for (double v : r) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : r) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    inv[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (r[j] - mu) * inv[i];
      y(i, j) = xhat(i, j) * gain.value()[j] + bias.value()[j];
    }
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  return make(std::move(y), {xn, gn, bn},
              [xn, gn, bn, xhat = std::move(xhat), inv = std::move(inv), n, d](Node& self) {
                const Matrix& dy = self.grad;
                if (gn->requires_grad || bn->requires_grad) {
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) {
                      if (gn->requires_grad) gn->grad_buffer()[j] += dy(i, j) * xhat(i, j);
                      if (bn->requires_grad) bn->grad_buffer()[j] += dy(i, j);
                    }
                }
                if (!xn->requires_grad) return;
                Matrix& dx = xn->grad_buffer();
                std::vector<double> dxhat(d);
                for (std::size_t i = 0; i < n; ++i) {
                  double s1 = 0.0, s2 = 0.0;
                  for (std::size_t j = 0; j < d; ++j) {
                    dxhat[j] = dy(i, j) * gn->value[j];
                    s1 += dxhat[j];
                    s2 += dxhat[j] * xhat(i, j);
                  }
                  const double dd = static_cast<double>(d);
                  for (std::size_t j = 0; j < d; ++j)
                    dx(i, j) += inv[i] / dd * (dd * dxhat[j] - s1 - xhat(i, j) * s2);
                }
              },
              any_requires_grad({&x, &gain, &bias}));
}

Var masked_softmax_rows(const Var& scores, std::span<const std::uint8_t> mask) {
  const std::size_t n = scores.rows(), m = scores.cols();
  require(mask.empty() || mask.size() == n * m, "masked_softmax_rows: mask size");
  Matrix p(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j)
      if (mask.empty() || mask[i * m + j]) mx = std::max(mx, scores.value()(i, j));
    require(std::isfinite(mx), "masked_softmax_rows: row fully masked");
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (mask.empty() || mask[i * m + j]) {
        p(i, j) = std::exp(scores.value()(i, j) - mx);
        z += p(i, j);
      }
    }
    for (std::size_t j = 0; j < m; ++j) p(i, j) /= z;
  }
  auto sn = scores.node();
  return make(p, {sn},
              [sn, p, n, m](Node& self) {
                Matrix& g = sn->grad_buffer();
                for (std::size_t i = 0; i < n; ++i) {
                  double s = 0.0;
                  for (std::size_t j = 0; j < m; ++j) s += self.grad(i, j) * p(i, j);
                  for (std::size_t j = 0; j < m; ++j) g(i, j) += p(i, j) * (self.grad(i, j) - s);
                }
              },
              scores.requires_grad());
}

// --- reductions / losses ----------------------------------------------------

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().flat()) s += v;
  auto an = a.node();
  return make(Matrix(1, 1, s), {an},
              [an](Node& self) {
                const double g = self.grad(0, 0);
                for (double& v : an->grad_buffer().flat()) v += g;
              },
              a.requires_grad());
}

Var squared_norm(const Var& a) {
  const double s = kernels::sum_sq(a.value().flat());
  auto an = a.node();
  return make(Matrix(1, 1, s), {an},
              [an](Node& self) { add_into(an->grad_buffer(), an->value, 2.0 * self.grad(0, 0)); },
              a.requires_grad());
}

Var mse(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "mse: shape mismatch");
  Matrix diff = a.value();
  add_into(diff, b.value(), -1.0);
  const double count = static_cast<double>(diff.size());
  const double s = kernels::sum_sq(diff.flat()) / count;
  auto an = a.node(), bn = b.node();
  return make(Matrix(1, 1, s), {an, bn},
              [an, bn, diff = std::move(diff), count](Node& self) {
                const double g = 2.0 * self.grad(0, 0) / count;
                if (an->requires_grad) add_into(an->grad_buffer(), diff, g);
                if (bn->requires_grad) add_into(bn->grad_buffer(), diff, -g);
              },
              any_requires_grad({&a, &b}));
}

Var cross_entropy(const Var& logits, std::size_t target) {
  require(logits.rows() == 1, "cross_entropy: logits must be a row");
  require(target < logits.cols(), "cross_entropy: target out of range");
  const auto z = logits.value().row(0);
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : z) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  auto ln = logits.node();
  return make(Matrix(1, 1, lse - z[target]), {ln},
              [ln, target, lse](Node& self) {
                const double g = self.grad(0, 0);
                Matrix& dz = ln->grad_buffer();
                for (std::size_t j = 0; j < dz.cols(); ++j)
                  dz(0, j) += g * std::exp(ln->value(0, j) - lse);
                dz(0, target) -= g;
              },
              logits.requires_grad());
}

Var cross_entropy_rows(const Var& logits, std::span<const std::size_t> targets) {
  require(targets.size() == logits.rows(), "cross_entropy_rows: one target per row");
  const std::size_t n = logits.rows(), m = logits.cols();
  std::vector<double> lse(n);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    require(targets[r] < m, "cross_entropy_rows: target out of range");
    const auto z = logits.value().row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : z) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    lse[r] = mx + std::log(s);
    total += lse[r] - z[targets[r]];
  }
  auto ln = logits.node();
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return make(Matrix(1, 1, total), {ln},
              [ln, tg = std::move(tg), lse = std::move(lse)](Node& self) {
                const double g = self.grad(0, 0);
                Matrix& dz = ln->grad_buffer();
                for (std::size_t r = 0; r < dz.rows(); ++r) {
                  for (std::size_t j = 0; j < dz.cols(); ++j)
                    dz(r, j) += g * std::exp(ln->value(r, j) - lse[r]);
                  dz(r, tg[r]) -= g;
                }
              },
              logits.requires_grad());
}

Var row_sum(const Var& a) {
  Matrix c(a.rows(), 1);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (double v : a.value().row(r)) c(r, 0) += v;
  auto an = a.node();
  return make(std::move(c), {an},
              [an](Node& self) {
                Matrix& g = an->grad_buffer();
                for (std::size_t r = 0; r < g.rows(); ++r)
                  for (double& v : g.row(r)) v += self.grad(r, 0);
              },
              a.requires_grad());
}

Var scale_rows(const Var& a, const Var& w) {
  require(w.cols() == 1 && w.rows() == a.rows(), "scale_rows: weights must be rows x 1");
  Matrix c = a.value();
  for (std::size_t r = 0; r < c.rows(); ++r)
    for (double& v : c.row(r)) v *= w.value()(r, 0);
  auto an = a.node(), wn = w.node();
  return make(std::move(c), {an, wn},
              [an, wn](Node& self) {
                if (an->requires_grad) {
                  Matrix& g = an->grad_buffer();
                  for (std::size_t r = 0; r < g.rows(); ++r) {
                    const double s = wn->value(r, 0);
                    auto gr = g.row(r);
                    auto sr = self.grad.row(r);
                    for (std::size_t j = 0; j < gr.size(); ++j) gr[j] += s * sr[j];
                  }
                }
                if (wn->requires_grad) {
                  Matrix& g = wn->grad_buffer();
                  for (std::size_t r = 0; r < g.rows(); ++r)
                    g(r, 0) += kernels::dot(self.grad.row(r), an->value.row(r));
                }
              },
              any_requires_grad({&a, &w}));
}

Var add_scalars(std::span<const Var> terms) {
  require(!terms.empty(), "add_scalars: no terms");
  double s = 0.0;
  bool track = false;
  std::vector<std::shared_ptr<Node>> inputs;
  for (const Var& t : terms) {
    s += t.item();
    track = track || t.requires_grad();
    inputs.push_back(t.node());
  }
  auto captured = inputs;
  return make(Matrix(1, 1, s), std::move(inputs),
              [captured](Node& self) {
                for (const auto& in : captured)
                  if (in->requires_grad) in->grad_buffer()(0, 0) += self.grad(0, 0);
              },
              track);
}

}  // namespace lgcd::ag
