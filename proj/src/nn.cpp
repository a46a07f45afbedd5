#include "fgb/nn.hpp"

#include <algorithm>
#include <cmath>

namespace fgb {

namespace {

using detail::Node;

// Local mirror of the op-wiring helper in tensor.cpp.
Tensor finish_op(std::shared_ptr<Node> result,
                 std::initializer_list<const Tensor*> parents,
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

std::shared_ptr<Node> make_node(std::vector<std::size_t> shape,
                                std::vector<double> value) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int padding) {
  check(x.shape().size() == 3, "conv2d: input must be [C,H,W]");
  check(w.shape().size() == 4, "conv2d: kernels must be [Cout,Cin,K,K]");
  const int cin = static_cast<int>(x.shape()[0]);
  const int h = static_cast<int>(x.shape()[1]);
  const int wd = static_cast<int>(x.shape()[2]);
  const int cout = static_cast<int>(w.shape()[0]);
  check(static_cast<int>(w.shape()[1]) == cin, "conv2d: channel mismatch");
  const int kh = static_cast<int>(w.shape()[2]);
  const int kw = static_cast<int>(w.shape()[3]);
  check(b.numel() == static_cast<std::size_t>(cout), "conv2d: bias size mismatch");
  check(stride >= 1 && padding >= 0, "conv2d: bad stride/padding");
  check(kh <= h + 2 * padding && kw <= wd + 2 * padding,
        "conv2d: kernel larger than padded input");

  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (wd + 2 * padding - kw) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(cout) * oh * ow, 0.0);
  const auto xv = x.values();
  const auto wv = w.values();
  const auto bv = b.values();

  auto xat = [&](int ci, int iy, int ix) {
    return xv[(ci * h + iy) * wd + ix];
  };
  auto wat = [&](int co, int ci, int ky, int kx) {
    return wv[((co * cin + ci) * kh + ky) * kw + kx];
  };

  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double s = bv[co];
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride - padding + kx;
              if (ix < 0 || ix >= wd) continue;
              s += wat(co, ci, ky, kx) * xat(ci, iy, ix);
            }
          }
        out[(co * oh + oy) * ow + ox] = s;
      }

  auto node = make_node({static_cast<std::size_t>(cout),
                         static_cast<std::size_t>(oh),
                         static_cast<std::size_t>(ow)},
                        std::move(out));
  Node* self = node.get();
  Node* px = x.node();
  Node* pw = w.node();
  Node* pb = b.node();
  return finish_op(
      std::move(node), {&x, &w, &b},
      [self, px, pw, pb, cin, h, wd, cout, kh, kw, oh, ow, stride, padding] {
        const bool gx = px->requires_grad;
        const bool gw = pw->requires_grad;
        const bool gb = pb->requires_grad;
        if (gx) px->ensure_grad();
        if (gw) pw->ensure_grad();
        if (gb) pb->ensure_grad();
        for (int co = 0; co < cout; ++co)
          for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
              const double g = self->grad[(co * oh + oy) * ow + ox];
              if (g == 0.0) continue;
              if (gb) pb->grad[co] += g;
              for (int ci = 0; ci < cin; ++ci)
                for (int ky = 0; ky < kh; ++ky) {
                  const int iy = oy * stride - padding + ky;
                  if (iy < 0 || iy >= h) continue;
                  for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * stride - padding + kx;
                    if (ix < 0 || ix >= wd) continue;
                    const std::size_t xi = (ci * h + iy) * wd + ix;
                    const std::size_t wi = ((co * cin + ci) * kh + ky) * kw + kx;
                    if (gx) px->grad[xi] += g * pw->value[wi];
                    if (gw) pw->grad[wi] += g * px->value[xi];
                  }
                }
            }
      });
}

Tensor max_pool2d(const Tensor& x) {
  check(x.shape().size() == 3, "max_pool2d: input must be [C,H,W]");
  const int c = static_cast<int>(x.shape()[0]);
  const int h = static_cast<int>(x.shape()[1]);
  const int w = static_cast<int>(x.shape()[2]);
  const int oh = h / 2;
  const int ow = w / 2;
  check(oh >= 1 && ow >= 1, "max_pool2d: input extents below 2x2");
  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow);
  // flat source index of each window maximum, for the backward scatter;
  // ties take the first element in scan order
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto xv = x.values();
  for (int ci = 0; ci < c; ++ci)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double best = -1.0 / 0.0;
        std::size_t best_i = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t i =
                (ci * h + (2 * oy + dy)) * w + (2 * ox + dx);
            if (xv[i] > best) {
              best = xv[i];
              best_i = i;
            }
          }
        const std::size_t o = (ci * oh + oy) * ow + ox;
        out[o] = best;
        (*arg)[o] = best_i;
      }
  auto node = make_node({static_cast<std::size_t>(c),
                         static_cast<std::size_t>(oh),
                         static_cast<std::size_t>(ow)},
                        std::move(out));
  Node* self = node.get();
  Node* px = x.node();
  return finish_op(std::move(node), {&x}, [self, px, arg] {
    px->ensure_grad();
    for (std::size_t o = 0; o < self->grad.size(); ++o)
      px->grad[(*arg)[o]] += self->grad[o];
  });
}

Tensor softmax_rows(const Tensor& x) {
  check(x.shape().size() == 2, "softmax_rows: expects a 2-d tensor");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  std::vector<double> out(rows * cols);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double m = xv[r * cols];
    for (std::size_t c = 1; c < cols; ++c) m = std::max(m, xv[r * cols + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = std::exp(xv[r * cols + c] - m);
      z += out[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= z;
  }
  auto node = make_node({rows, cols}, std::move(out));
  Node* self = node.get();
  Node* px = x.node();
  return finish_op(std::move(node), {&x}, [self, px, rows, cols] {
    px->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c)
        dot += self->grad[r * cols + c] * self->value[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c)
        px->grad[r * cols + c] +=
            self->value[r * cols + c] * (self->grad[r * cols + c] - dot);
    }
  });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps) {
  check(x.shape().size() == 2, "layer_norm_rows: expects a 2-d tensor");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  check(gain.numel() == cols && bias.numel() == cols,
        "layer_norm_rows: gain/bias width mismatch");
  std::vector<double> out(rows * cols);
  auto xhat = std::make_shared<std::vector<double>>(rows * cols);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xv[r * cols + c];
    mu /= cols;
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = xv[r * cols + c] - mu;
      var += d * d;
    }
    var /= cols;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const double xh = (xv[r * cols + c] - mu) * is;
      (*xhat)[r * cols + c] = xh;
      out[r * cols + c] = gv[c] * xh + bv[c];
    }
  }
  auto node = make_node({rows, cols}, std::move(out));
  Node* self = node.get();
  Node* px = x.node();
  Node* pg = gain.node();
  Node* pb = bias.node();
  return finish_op(
      std::move(node), {&x, &gain, &bias},
      [self, px, pg, pb, xhat, inv_std, rows, cols] {
        const bool gx = px->requires_grad;
        const bool gg = pg->requires_grad;
        const bool gb = pb->requires_grad;
        if (gx) px->ensure_grad();
        if (gg) pg->ensure_grad();
        if (gb) pb->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          double sum_dxh = 0.0, sum_dxh_xh = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            const double dy = self->grad[i];
            const double dxh = dy * pg->value[c];
            if (gg) pg->grad[c] += dy * (*xhat)[i];
            if (gb) pb->grad[c] += dy;
            sum_dxh += dxh;
            sum_dxh_xh += dxh * (*xhat)[i];
          }
          if (gx) {
            const double is = (*inv_std)[r];
            for (std::size_t c = 0; c < cols; ++c) {
              const std::size_t i = r * cols + c;
              const double dxh = self->grad[i] * pg->value[c];
              px->grad[i] += is * (dxh - sum_dxh / cols -
                                   (*xhat)[i] * sum_dxh_xh / cols);
            }
          }
        }
      });
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  check(table.shape().size() == 2, "embedding: table must be [V,d]");
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    check(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < v,
          "embedding: id " + std::to_string(ids[i]) + " out of range");
    for (std::size_t c = 0; c < d; ++c)
      out[i * d + c] = table.value_at(ids[i] * d + c);
  }
  auto node = make_node({ids.size(), d}, std::move(out));
  Node* self = node.get();
  Node* pt = table.node();
  auto ids_copy = std::make_shared<std::vector<int>>(ids);
  return finish_op(std::move(node), {&table}, [self, pt, ids_copy, d] {
    pt->ensure_grad();
    for (std::size_t i = 0; i < ids_copy->size(); ++i)
      for (std::size_t c = 0; c < d; ++c)
        pt->grad[(*ids_copy)[i] * d + c] += self->grad[i * d + c];
  });
}

Tensor multi_head_self_attention(const Tensor& x, const Tensor& wq,
                                 const Tensor& bq, const Tensor& wk,
                                 const Tensor& bk, const Tensor& wv,
                                 const Tensor& bv, const Tensor& wo,
                                 const Tensor& bo, int heads,
                                 AttentionTrace* trace, int layer_index) {
  check(x.shape().size() == 2, "attention: input must be [s,d]");
  const int s = static_cast<int>(x.shape()[0]);
  const int d = static_cast<int>(x.shape()[1]);
  check(heads >= 1 && d % heads == 0, "attention: width not divisible by heads");
  const int dh = d / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor q = affine(x, wq, bq);
  Tensor k = affine(x, wk, bk);
  Tensor v = affine(x, wv, bv);

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul_transposed(qh, kh), inv_sqrt_dh);
    Tensor probs = softmax_rows(scores);
    if (trace) {
      for (int qi = 0; qi < s; ++qi)
        for (int kj = 0; kj < s; ++kj)
          trace->a[trace->offset(layer_index, h, qi) + kj] =
              probs.value_at(qi * s + kj);
    }
    head_outputs.push_back(matmul(probs, vh));
  }
  Tensor merged = heads == 1 ? head_outputs[0] : concat_cols(head_outputs);
  return affine(merged, wo, bo);
}

}  // namespace fgb
