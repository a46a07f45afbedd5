#pragma once

#include <vector>

#include "fgb/tensor.hpp"

namespace fgb {

// Per-layer, per-head softmax attention maps recorded during an encoder
// forward pass. at(k, h, q, j) is the probability that query position q
// attends to key position j in layer k, head h; each (k, h, q) row sums to 1.
struct AttentionTrace {
  int layer_count = 0;
  int head_count = 0;
  int seq_len = 0;
  std::vector<double> a;  // [layer][head][query][key], row-major

  void resize(int layers, int heads, int s) {
    layer_count = layers;
    head_count = heads;
    seq_len = s;
    a.assign(static_cast<std::size_t>(layers) * heads * s * s, 0.0);
  }
  std::size_t offset(int layer, int head, int q) const {
    return ((static_cast<std::size_t>(layer) * head_count + head) * seq_len + q) *
           seq_len;
  }
  double at(int layer, int head, int q, int k) const {
    return a[offset(layer, head, q) + k];
  }
  // Attention averaged over heads.
  double head_avg(int layer, int q, int k) const {
    double s = 0.0;
    for (int h = 0; h < head_count; ++h) s += at(layer, h, q, k);
    return s / head_count;
  }
};

// ---- image layers ----

// Cross-correlation of x [Cin,H,W] with kernels w [Cout,Cin,K,K] plus bias
// b [Cout]; output extents H' = floor((H + 2*padding - K)/stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int padding);

// 2x2 max pooling with stride 2; trailing odd row/column is dropped.
Tensor max_pool2d(const Tensor& x);

// ---- sequence layers ----

// Row-wise softmax over the last dimension of a 2-d tensor.
Tensor softmax_rows(const Tensor& x);

// Row-wise layer normalization with learned gain/bias over the last dim.
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-5);

// Gathers rows of table [V,d] at the given ids -> [ids.size(), d].
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

// Multi-head self-attention over x [s,d] with packed projections
// wq/wk/wv/wo [d,d] and biases [d]. When trace is non-null the softmax maps
// of every head are recorded at the given layer index.
Tensor multi_head_self_attention(const Tensor& x, const Tensor& wq,
                                 const Tensor& bq, const Tensor& wk,
                                 const Tensor& bk, const Tensor& wv,
                                 const Tensor& bv, const Tensor& wo,
                                 const Tensor& bo, int heads,
                                 AttentionTrace* trace, int layer_index);

}  // namespace fgb
