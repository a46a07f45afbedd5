#include "fgb/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace fgb {

namespace detail {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

void set_grad_enabled(bool v) { g_grad_enabled = v; }

}  // namespace detail

NoGradGuard::NoGradGuard() : prev_(detail::grad_enabled()) {
  detail::set_grad_enabled(false);
}

NoGradGuard::~NoGradGuard() { detail::set_grad_enabled(prev_); }

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

NodePtr make_node(std::vector<std::size_t> shape, std::vector<double> value) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Wires the result into the graph when recording is on and any parent needs
// gradients; otherwise the result is a detached value.
Tensor finish(NodePtr result, std::initializer_list<const Tensor*> parents,
              std::function<void()> backprop) {
  bool need = false;
  if (detail::grad_enabled()) {
    for (const Tensor* p : parents) need = need || p->requires_grad();
  }
  if (need) {
    result->requires_grad = true;
    for (const Tensor* p : parents) result->parents.push_back(p->node_ptr());
    result->backprop = std::move(backprop);
  }
  return Tensor::from_node(std::move(result));
}

Tensor wrap(NodePtr n) { return Tensor::from_node(std::move(n)); }

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data,
               bool requires_grad) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  check(n == data.size(), "Tensor: shape/data length mismatch");
  n_ = make_node(std::move(shape), std::move(data));
  n_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v, bool requires_grad) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor({1}, {v}, requires_grad);
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> n) {
  Tensor t;
  t.n_ = std::move(n);
  return t;
}

double Tensor::scalar_value() const {
  check(is_scalar(), "scalar_value: tensor is not a scalar");
  return n_->value[0];
}

std::span<const double> Tensor::grad() const {
  check(has_grad(), "grad: no gradient populated for this tensor");
  return n_->grad;
}

std::span<double> Tensor::grad_mut() {
  n_->ensure_grad();
  return n_->grad;
}

Tensor Tensor::detach() const {
  auto n = make_node(n_->shape, n_->value);
  return wrap(std::move(n));
}

Tensor Tensor::clone(bool requires_grad) const {
  auto n = make_node(n_->shape, n_->value);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

void backward(const Tensor& loss) {
  check(loss.defined(), "backward: undefined tensor");
  check(loss.is_scalar(), "backward: loss must be a scalar");
  Node* root = loss.node();
  if (!root->requires_grad) return;  // nothing in the graph wants gradients

  // Iterative post-order topological sort over the recorded graph.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior results get a fresh gradient each pass; only leaves (nodes
  // without a backprop step) accumulate across repeated calls.
  for (Node* n : order)
    if (n->backprop) n->grad.assign(n->value.size(), 0.0);

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop();
  }
}

// ---------------------------------------------------------------------------
// elementwise / reduction
// ---------------------------------------------------------------------------

Tensor operator+(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.value_at(i) + b.value_at(i);
  auto n = make_node(a.shape(), std::move(out));
  Node* self = n.get();
  Node* pa = a.node();
  Node* pb = b.node();
  return finish(std::move(n), {&a, &b}, [self, pa, pb] {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        pa->grad[i] += self->grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        pb->grad[i] += self->grad[i];
    }
  });
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.value_at(i) - b.value_at(i);
  auto n = make_node(a.shape(), std::move(out));
  Node* self = n.get();
  Node* pa = a.node();
  Node* pb = b.node();
  return finish(std::move(n), {&a, &b}, [self, pa, pb] {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        pa->grad[i] += self->grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        pb->grad[i] -= self->grad[i];
    }
  });
}

Tensor operator*(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.value_at(i) * b.value_at(i);
  auto n = make_node(a.shape(), std::move(out));
  Node* self = n.get();
  Node* pa = a.node();
  Node* pb = b.node();
  return finish(std::move(n), {&a, &b}, [self, pa, pb] {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        pa->grad[i] += self->grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        pb->grad[i] += self->grad[i] * pa->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value_at(i) * c;
  auto n = make_node(a.shape(), std::move(out));
  Node* self = n.get();
  Node* pa = a.node();
  return finish(std::move(n), {&a}, [self, pa, c] {
    pa->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i)
      pa->grad[i] += self->grad[i] * c;
  });
}

Tensor add_const(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value_at(i) + c;
  auto n = make_node(a.shape(), std::move(out));
  Node* self = n.get();
  Node* pa = a.node();
  return finish(std::move(n), {&a}, [self, pa] {
    pa->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i)
      pa->grad[i] += self->grad[i];
  });
}

Tensor exp_elem(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.value_at(i));
  auto n = make_node(a.shape(), std::move(out));
  Node* self = n.get();
  Node* pa = a.node();
  return finish(std::move(n), {&a}, [self, pa] {
    pa->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i)
      pa->grad[i] += self->grad[i] * self->value[i];
  });
}

Tensor log_elem(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.value_at(i));
  auto n = make_node(a.shape(), std::move(out));
  Node* self = n.get();
  Node* pa = a.node();
  return finish(std::move(n), {&a}, [self, pa] {
    pa->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i)
      pa->grad[i] += self->grad[i] / pa->value[i];
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.value_at(i) > 0.0 ? a.value_at(i) : 0.0;
  auto n = make_node(a.shape(), std::move(out));
  Node* self = n.get();
  Node* pa = a.node();
  return finish(std::move(n), {&a}, [self, pa] {
    pa->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i)
      if (pa->value[i] > 0.0) pa->grad[i] += self->grad[i];
  });
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.value_at(i);
  auto n = make_node({1}, {s});
  Node* self = n.get();
  Node* pa = a.node();
  return finish(std::move(n), {&a}, [self, pa] {
    pa->ensure_grad();
    for (std::size_t i = 0; i < pa->grad.size(); ++i)
      pa->grad[i] += self->grad[0];
  });
}

Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor select(const Tensor& v, std::size_t index) {
  check(index < v.numel(), "select: index out of range");
  auto n = make_node({1}, {v.value_at(index)});
  Node* self = n.get();
  Node* pv = v.node();
  return finish(std::move(n), {&v}, [self, pv, index] {
    pv->ensure_grad();
    pv->grad[index] += self->grad[0];
  });
}

Tensor broadcast_to(const Tensor& scalar, std::size_t n) {
  check(scalar.is_scalar(), "broadcast_to: source must be a scalar");
  auto node = make_node({n}, std::vector<double>(n, scalar.scalar_value()));
  Node* self = node.get();
  Node* ps = scalar.node();
  return finish(std::move(node), {&scalar}, [self, ps] {
    ps->ensure_grad();
    for (double g : self->grad) ps->grad[0] += g;
  });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  check(n == a.numel(), "reshape: element count mismatch");
  auto node = make_node(std::move(shape),
                        std::vector<double>(a.values().begin(), a.values().end()));
  Node* self = node.get();
  Node* pa = a.node();
  return finish(std::move(node), {&a}, [self, pa] {
    pa->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i)
      pa->grad[i] += self->grad[i];
  });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  check(x.shape().size() == 2, "slice_rows: expects a 2-d tensor");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  check(start + count <= rows, "slice_rows: range out of bounds");
  std::vector<double> out(count * cols);
  for (std::size_t i = 0; i < count * cols; ++i)
    out[i] = x.value_at(start * cols + i);
  auto n = make_node({count, cols}, std::move(out));
  Node* self = n.get();
  Node* px = x.node();
  return finish(std::move(n), {&x}, [self, px, start, cols] {
    px->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i)
      px->grad[start * cols + i] += self->grad[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  check(x.shape().size() == 2, "slice_cols: expects a 2-d tensor");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  check(start + count <= cols, "slice_cols: range out of bounds");
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < count; ++c)
      out[r * count + c] = x.value_at(r * cols + start + c);
  auto n = make_node({rows, count}, std::move(out));
  Node* self = n.get();
  Node* px = x.node();
  return finish(std::move(n), {&x}, [self, px, rows, cols, start, count] {
    px->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < count; ++c)
        px->grad[r * cols + start + c] += self->grad[r * count + c];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_cols: no inputs");
  const std::size_t rows = parts[0].shape()[0];
  std::size_t cols = 0;
  for (const auto& p : parts) {
    check(p.shape().size() == 2 && p.shape()[0] == rows,
          "concat_cols: row count mismatch");
    cols += p.shape()[1];
  }
  std::vector<double> out(rows * cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.shape()[1];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pc; ++c)
        out[r * cols + off + c] = p.value_at(r * pc + c);
    off += pc;
  }
  auto n = make_node({rows, cols}, std::move(out));
  Node* self = n.get();

  bool need = false;
  if (detail::grad_enabled())
    for (const auto& p : parts) need = need || p.requires_grad();
  if (!need) return wrap(std::move(n));

  std::vector<NodePtr> parent_nodes;
  parent_nodes.reserve(parts.size());
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    parent_nodes.push_back(p.node_ptr());
    widths.push_back(p.shape()[1]);
  }
  n->requires_grad = true;
  n->parents = parent_nodes;
  n->backprop = [self, parent_nodes, widths, rows, cols] {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parent_nodes.size(); ++k) {
      Node* p = parent_nodes[k].get();
      const std::size_t pc = widths[k];
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < pc; ++c)
            p->grad[r * pc + c] += self->grad[r * cols + off + c];
      }
      off += pc;
    }
  };
  return wrap(std::move(n));
}

// ---------------------------------------------------------------------------
// matrix ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.shape().size() == 2 && b.shape().size() == 2,
        "matmul: expects 2-d tensors");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  check(b.shape()[0] == k, "matmul: inner dimension mismatch");
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = av[i * k + kk];
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j)
        out[i * n + j] += aik * bv[kk * n + j];
    }
  auto node = make_node({m, n}, std::move(out));
  Node* self = node.get();
  Node* pa = a.node();
  Node* pb = b.node();
  return finish(std::move(node), {&a, &b}, [self, pa, pb, m, k, n] {
    if (pa->requires_grad) {
      pa->ensure_grad();
      // dA += dC * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double g = self->grad[i * n + j];
          if (g == 0.0) continue;
          for (std::size_t kk = 0; kk < k; ++kk)
            pa->grad[i * k + kk] += g * pb->value[kk * n + j];
        }
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      // dB += A^T * dC
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double av = pa->value[i * k + kk];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j)
            pb->grad[kk * n + j] += av * self->grad[i * n + j];
        }
    }
  });
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  check(a.shape().size() == 2 && b.shape().size() == 2,
        "matmul_transposed: expects 2-d tensors");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  check(b.shape()[1] == k, "matmul_transposed: inner dimension mismatch");
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk)
        s += av[i * k + kk] * bv[j * k + kk];
      out[i * n + j] = s;
    }
  auto node = make_node({m, n}, std::move(out));
  Node* self = node.get();
  Node* pa = a.node();
  Node* pb = b.node();
  return finish(std::move(node), {&a, &b}, [self, pa, pb, m, k, n] {
    if (pa->requires_grad) {
      pa->ensure_grad();
      // dA += dC * B
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double g = self->grad[i * n + j];
          if (g == 0.0) continue;
          for (std::size_t kk = 0; kk < k; ++kk)
            pa->grad[i * k + kk] += g * pb->value[j * k + kk];
        }
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      // dB += dC^T * A
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double g = self->grad[i * n + j];
          if (g == 0.0) continue;
          for (std::size_t kk = 0; kk < k; ++kk)
            pb->grad[j * k + kk] += g * pa->value[i * k + kk];
        }
    }
  });
}

Tensor add_row_bias(const Tensor& x, const Tensor& b) {
  check(x.shape().size() == 2, "add_row_bias: expects a 2-d tensor");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  check(b.numel() == cols, "add_row_bias: bias width mismatch");
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = x.value_at(r * cols + c) + b.value_at(c);
  auto n = make_node({rows, cols}, std::move(out));
  Node* self = n.get();
  Node* px = x.node();
  Node* pb = b.node();
  return finish(std::move(n), {&x, &b}, [self, px, pb, rows, cols] {
    if (px->requires_grad) {
      px->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        px->grad[i] += self->grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          pb->grad[c] += self->grad[r * cols + c];
    }
  });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_row_bias(matmul(x, w), b);
}

}  // namespace fgb
