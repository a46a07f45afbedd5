#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "fgb/common.hpp"

namespace fgb {

namespace detail {

struct Node {
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backprop;  // scatters this->grad into parent grads

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

bool grad_enabled();

}  // namespace detail

// Disables graph recording within the scope; forwards run value-only.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense n-dimensional double tensor; a cheap handle onto a graph node.
// Ops record the computation so that backward() can populate gradients of
// every requires_grad participant.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data,
         bool requires_grad = false);

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double v,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return n_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return n_->shape; }
  std::size_t numel() const { return n_->numel(); }
  bool is_scalar() const { return numel() == 1; }
  double scalar_value() const;

  std::span<const double> values() const { return n_->value; }
  std::span<double> values_mut() { return n_->value; }
  double value_at(std::size_t i) const { return n_->value[i]; }

  bool requires_grad() const { return n_->requires_grad; }
  bool has_grad() const { return !n_->grad.empty(); }
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void zero_grad() { n_->grad.clear(); }

  // Same values, no graph history, no grad requirement.
  Tensor detach() const;
  // Deep copy of values; independent node.
  Tensor clone(bool requires_grad = false) const;

  detail::Node* node() const { return n_.get(); }
  std::shared_ptr<detail::Node> node_ptr() const { return n_; }

  // Adopts an existing graph node; used by op implementations.
  static Tensor from_node(std::shared_ptr<detail::Node> n);

 private:
  std::shared_ptr<detail::Node> n_;
};

// Runs reverse-mode accumulation from a scalar loss. Repeated calls without
// zeroing accumulate into existing grad buffers.
void backward(const Tensor& loss);

// ---- elementwise / reduction ops ----
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor exp_elem(const Tensor& a);
Tensor log_elem(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sum_all(const Tensor& a);             // -> scalar
Tensor mean_all(const Tensor& a);            // -> scalar
Tensor select(const Tensor& v, std::size_t index);  // flat index -> scalar
Tensor broadcast_to(const Tensor& scalar, std::size_t n);  // scalar -> [n]

// ---- shape ops ----
Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);

// ---- matrix ops ----
Tensor matmul(const Tensor& a, const Tensor& b);             // [m,k]x[k,n]
Tensor matmul_transposed(const Tensor& a, const Tensor& b);  // a x b^T, b is [n,k]
Tensor add_row_bias(const Tensor& x, const Tensor& b);       // broadcast over rows
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace fgb
