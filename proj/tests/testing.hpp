#pragma once

// Shared test-only helpers: finite-difference gradient oracle, a tiny
// closed-form least-squares solver, and misc fixtures. Everything here is
// independent of the library's backward pass so it can serve as an oracle
// for it.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fgb/common.hpp"
#include "fgb/tensor.hpp"

namespace fgbtest {

// Central finite difference of a scalar-valued forward w.r.t. every element
// of the given leaf tensors, compared against the analytic gradients from
// backward(). The forward must rebuild its graph from the leaves' current
// values on every call.
struct GradCheckResult {
  bool ok = true;
  double worst_err = 0.0;
  std::string where;
};

inline GradCheckResult check_gradients(
    const std::function<fgb::Tensor()>& forward,
    std::vector<fgb::Tensor> leaves, double h = 1e-5, double tol = 1e-4) {
  using fgb::Tensor;
  Tensor loss = forward();
  for (auto& l : leaves) l.zero_grad();
  fgb::backward(loss);

  std::vector<std::vector<double>> analytic;
  for (auto& l : leaves) {
    if (l.has_grad())
      analytic.emplace_back(l.grad().begin(), l.grad().end());
    else
      analytic.emplace_back(l.numel(), 0.0);
  }

  GradCheckResult res;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto vals = leaves[li].values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double fp = forward().scalar_value();
      vals[i] = orig - h;
      const double fm = forward().scalar_value();
      vals[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic[li][i];
      const double err =
          std::fabs(an - fd) / std::max({1.0, std::fabs(an), std::fabs(fd)});
      if (err > res.worst_err) {
        res.worst_err = err;
        res.where = "leaf " + std::to_string(li) + " elem " + std::to_string(i);
      }
      if (err > tol) res.ok = false;
    }
  }
  return res;
}

// Exact least-squares fit of a linear map (with bias) to target rows:
// minimizes sum_i ||A xh_i - t_i||^2 over A where xh = [x; 1]. Solved by
// normal equations with a tiny ridge for rank safety. Used as the spec's
// closed-form weak-learner oracle.
struct LinearLeastSquares {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  fgb::Matrix coef;  // [out_dim, in_dim + 1]

  static LinearLeastSquares fit(const std::vector<std::vector<double>>& xs,
                                const fgb::Matrix& targets,
                                double ridge = 1e-10) {
    using fgb::Matrix;
    LinearLeastSquares model;
    model.in_dim = xs.empty() ? 0 : xs[0].size();
    model.out_dim = targets.cols;
    const std::size_t d = model.in_dim + 1;
    // G = Xh^T Xh + ridge I,  B = Xh^T T
    Matrix g(d, d, 0.0), bt(d, targets.cols, 0.0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      std::vector<double> xh(xs[i]);
      xh.push_back(1.0);
      for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < d; ++c) g.at(r, c) += xh[r] * xh[c];
        for (std::size_t c = 0; c < targets.cols; ++c)
          bt.at(r, c) += xh[r] * targets.at(i, c);
      }
    }
    for (std::size_t r = 0; r < d; ++r) g.at(r, r) += ridge;
    // Gauss-Jordan solve G * W = B
    for (std::size_t col = 0; col < d; ++col) {
      std::size_t piv = col;
      for (std::size_t r = col + 1; r < d; ++r)
        if (std::fabs(g.at(r, col)) > std::fabs(g.at(piv, col))) piv = r;
      if (piv != col) {
        for (std::size_t c = 0; c < d; ++c) std::swap(g.at(col, c), g.at(piv, c));
        for (std::size_t c = 0; c < bt.cols; ++c)
          std::swap(bt.at(col, c), bt.at(piv, c));
      }
      const double p = g.at(col, col);
      for (std::size_t c = 0; c < d; ++c) g.at(col, c) /= p;
      for (std::size_t c = 0; c < bt.cols; ++c) bt.at(col, c) /= p;
      for (std::size_t r = 0; r < d; ++r) {
        if (r == col) continue;
        const double f = g.at(r, col);
        if (f == 0.0) continue;
        for (std::size_t c = 0; c < d; ++c) g.at(r, c) -= f * g.at(col, c);
        for (std::size_t c = 0; c < bt.cols; ++c)
          bt.at(r, c) -= f * bt.at(col, c);
      }
    }
    model.coef = Matrix(model.out_dim, d, 0.0);
    for (std::size_t o = 0; o < model.out_dim; ++o)
      for (std::size_t c = 0; c < d; ++c) model.coef.at(o, c) = bt.at(c, o);
    return model;
  }

  std::vector<double> predict(const std::vector<double>& x) const {
    std::vector<double> out(out_dim, 0.0);
    for (std::size_t o = 0; o < out_dim; ++o) {
      double s = coef.at(o, in_dim);  // bias
      for (std::size_t i = 0; i < in_dim; ++i) s += coef.at(o, i) * x[i];
      out[o] = s;
    }
    return out;
  }
};

}  // namespace fgbtest
