#include "fgb/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fgb::learners {

namespace {

Tensor uniform_init(std::vector<std::size_t> shape, std::size_t fan_in,
                    Rng& rng) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor normal_init(std::vector<std::size_t> shape, double stddev, Rng& rng) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(v), true);
}

std::string conv_w(int i) { return "conv" + std::to_string(i) + ".w"; }
std::string conv_b(int i) { return "conv" + std::to_string(i) + ".b"; }

}  // namespace

// ---------------------------------------------------------------------------
// CNN
// ---------------------------------------------------------------------------

std::pair<std::size_t, std::size_t> extractor_output_extents(
    const CnnConfig& cfg, std::size_t h, std::size_t w) {
  std::size_t ch = h, cw = w;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    ch = (ch + 2 * cfg.padding - cfg.kernel) / cfg.stride + 1;
    cw = (cw + 2 * cfg.padding - cfg.kernel) / cfg.stride + 1;
    ch /= 2;  // 2x2 max-pool
    cw /= 2;
    check(ch >= 1 && cw >= 1,
          "extractor: grid extents below the stack's minimum receptive size");
  }
  return {ch, cw};
}

std::size_t head_input_width(const CnnConfig& cfg, std::size_t h, std::size_t w) {
  auto [fh, fw] = extractor_output_extents(cfg, h, w);
  return static_cast<std::size_t>(cfg.channels.back()) * fh * fw;
}

CnnWeakLearner CnnWeakLearner::fresh(const CnnConfig& cfg, std::size_t grid_h,
                                     std::size_t grid_w, uint64_t seed) {
  CnnWeakLearner m;
  m.cfg_ = cfg;
  m.grid_h_ = grid_h;
  m.grid_w_ = grid_w;
  Rng rng(mix_seed(seed, 0x11));
  int cin = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    const int cout = cfg.channels[i];
    const std::size_t fan_in =
        static_cast<std::size_t>(cin) * cfg.kernel * cfg.kernel;
    m.params_.add(conv_w(static_cast<int>(i)),
                  uniform_init({static_cast<std::size_t>(cout),
                                static_cast<std::size_t>(cin),
                                static_cast<std::size_t>(cfg.kernel),
                                static_cast<std::size_t>(cfg.kernel)},
                               fan_in, rng));
    m.params_.add(conv_b(static_cast<int>(i)),
                  uniform_init({static_cast<std::size_t>(cout)}, fan_in, rng));
    cin = cout;
  }
  const std::size_t width = head_input_width(cfg, grid_h, grid_w);
  Rng head_rng(mix_seed(seed, 0x22));
  m.params_.add("head.w",
                uniform_init({width, static_cast<std::size_t>(cfg.classes)},
                             width, head_rng));
  m.params_.add("head.b",
                uniform_init({static_cast<std::size_t>(cfg.classes)}, width,
                             head_rng));
  return m;
}

CnnWeakLearner CnnWeakLearner::from_extractor(const ParamStore& extractor,
                                              const CnnConfig& cfg,
                                              std::size_t grid_h,
                                              std::size_t grid_w, uint64_t seed) {
  CnnWeakLearner m = fresh(cfg, grid_h, grid_w, seed);
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    m.params_.copy_values_from(extractor, conv_w(static_cast<int>(i)));
    m.params_.copy_values_from(extractor, conv_b(static_cast<int>(i)));
  }
  return m;
}

Tensor CnnWeakLearner::forward_features(const Tensor& image) const {
  check(image.shape().size() == 3, "cnn: input must be [C,H,W]");
  check(static_cast<int>(image.shape()[0]) == cfg_.in_channels,
        "cnn: channel count mismatch");
  Tensor x = image;
  for (std::size_t i = 0; i < cfg_.channels.size(); ++i) {
    x = conv2d(x, params_.get(conv_w(static_cast<int>(i))),
               params_.get(conv_b(static_cast<int>(i))), cfg_.stride,
               cfg_.padding);
    x = relu(max_pool2d(x));
  }
  return x;
}

Tensor CnnWeakLearner::forward(const Tensor& image) const {
  Tensor feat = forward_features(image);
  const std::size_t width = feat.numel();
  check(width == params_.get("head.w").shape()[0],
        "cnn: head width does not match the feature map for this grid");
  Tensor flat = reshape(feat, {1, width});
  Tensor logits = affine(flat, params_.get("head.w"), params_.get("head.b"));
  return reshape(logits, {static_cast<std::size_t>(cfg_.classes)});
}

Tensor CnnWeakLearner::forward_train(const Sample& sample) {
  check(std::holds_alternative<Tensor>(sample), "cnn: expected an image sample");
  return forward(std::get<Tensor>(sample));
}

std::vector<double> CnnWeakLearner::score(const Sample& viewed) const {
  NoGradGuard ng;
  check(std::holds_alternative<Tensor>(viewed), "cnn: expected an image sample");
  Tensor out = forward(std::get<Tensor>(viewed));
  return {out.values().begin(), out.values().end()};
}

ParamStore transfer_extractor(const CnnWeakLearner& src) {
  ParamStore out;
  const auto& cfg = src.config();
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    const auto wname = conv_w(static_cast<int>(i));
    const auto bname = conv_b(static_cast<int>(i));
    out.add(wname, src.params().get(wname).clone(true));
    out.add(bname, src.params().get(bname).clone(true));
  }
  return out;
}

subgrid::ProbeModel make_probe_model(const CnnWeakLearner& incumbent,
                                     const CnnWeakLearner& basic) {
  const std::size_t full_width = head_input_width(
      incumbent.config(), basic.grid_height(), basic.grid_width());
  const std::size_t head_width = basic.params().get("head.w").shape()[0];
  check(full_width == head_width,
        "probe model: extractor output width " + std::to_string(full_width) +
            " does not match the basic classifier input width " +
            std::to_string(head_width));

  // Tensor handles share the underlying buffers, so the probe reads the
  // live parameters without copying them.
  const CnnWeakLearner* ext = &incumbent;
  Tensor head_w = basic.params().get("head.w");
  Tensor head_b = basic.params().get("head.b");
  const std::size_t classes = head_w.shape()[1];
  subgrid::ProbeModel probe;
  probe.forward = [ext, head_w, head_b, classes](const Tensor& image) {
    Tensor feat = ext->forward_features(image);
    Tensor flat = reshape(feat, {1, feat.numel()});
    return reshape(affine(flat, head_w, head_b), {classes});
  };
  return probe;
}

// ---------------------------------------------------------------------------
// transformer
// ---------------------------------------------------------------------------

namespace {

std::string layer_name(int l, const char* suffix) {
  return "layer" + std::to_string(l) + "." + suffix;
}

}  // namespace

TransformerWeakLearner TransformerWeakLearner::fresh(const TransformerConfig& cfg,
                                                     uint64_t seed) {
  check(cfg.vocab_size > 0, "transformer: vocab_size must be set");
  check(cfg.d_model % cfg.heads == 0,
        "transformer: width must be divisible by heads");
  TransformerWeakLearner m;
  m.cfg_ = cfg;
  Rng rng(mix_seed(seed, 0x33));
  const auto d = static_cast<std::size_t>(cfg.d_model);
  m.params_.add("tok_emb",
                normal_init({static_cast<std::size_t>(cfg.vocab_size), d}, 0.02,
                            rng));
  m.params_.add("pos_emb",
                normal_init({static_cast<std::size_t>(cfg.max_len), d}, 0.02,
                            rng));
  for (int l = 0; l < cfg.layers; ++l) {
    for (const char* n : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
      m.params_.add(layer_name(l, n), uniform_init({d, d}, d, rng));
    for (const char* n : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
      m.params_.add(layer_name(l, n), uniform_init({d}, d, rng));
    m.params_.add(layer_name(l, "ln1.g"), Tensor::full({d}, 1.0, true));
    m.params_.add(layer_name(l, "ln1.b"), Tensor::zeros({d}, true));
    const auto ffn = static_cast<std::size_t>(cfg.ffn_hidden);
    m.params_.add(layer_name(l, "ffn.w1"), uniform_init({d, ffn}, d, rng));
    m.params_.add(layer_name(l, "ffn.b1"), uniform_init({ffn}, d, rng));
    m.params_.add(layer_name(l, "ffn.w2"), uniform_init({ffn, d}, ffn, rng));
    m.params_.add(layer_name(l, "ffn.b2"), uniform_init({d}, ffn, rng));
    m.params_.add(layer_name(l, "ln2.g"), Tensor::full({d}, 1.0, true));
    m.params_.add(layer_name(l, "ln2.b"), Tensor::zeros({d}, true));
  }
  m.params_.add("head.w",
                uniform_init({d, static_cast<std::size_t>(cfg.classes)}, d, rng));
  m.params_.add("head.b",
                uniform_init({static_cast<std::size_t>(cfg.classes)}, d, rng));
  return m;
}

Tensor TransformerWeakLearner::forward(const std::vector<int>& tokens,
                                       AttentionTrace* trace) const {
  check(!tokens.empty(), "transformer: empty sequence");
  check(tokens.front() == kClsToken,
        "transformer: sequence must start with the classification token");
  const int s = static_cast<int>(tokens.size());
  check(s <= cfg_.max_len, "transformer: sequence longer than max_len");
  for (int t : tokens)
    check(t >= 0 && t < cfg_.vocab_size,
          "transformer: token id " + std::to_string(t) + " out of range");

  if (trace) trace->resize(cfg_.layers, cfg_.heads, s);

  std::vector<int> positions(tokens.size());
  std::iota(positions.begin(), positions.end(), 0);
  Tensor x = embedding(params_.get("tok_emb"), tokens) +
             embedding(params_.get("pos_emb"), positions);
  for (int l = 0; l < cfg_.layers; ++l) {
    Tensor attn = multi_head_self_attention(
        x, params_.get(layer_name(l, "attn.wq")),
        params_.get(layer_name(l, "attn.bq")),
        params_.get(layer_name(l, "attn.wk")),
        params_.get(layer_name(l, "attn.bk")),
        params_.get(layer_name(l, "attn.wv")),
        params_.get(layer_name(l, "attn.bv")),
        params_.get(layer_name(l, "attn.wo")),
        params_.get(layer_name(l, "attn.bo")), cfg_.heads, trace, l);
    x = layer_norm_rows(x + attn, params_.get(layer_name(l, "ln1.g")),
                        params_.get(layer_name(l, "ln1.b")));
    Tensor hidden = relu(affine(x, params_.get(layer_name(l, "ffn.w1")),
                                params_.get(layer_name(l, "ffn.b1"))));
    Tensor ffn_out = affine(hidden, params_.get(layer_name(l, "ffn.w2")),
                            params_.get(layer_name(l, "ffn.b2")));
    x = layer_norm_rows(x + ffn_out, params_.get(layer_name(l, "ln2.g")),
                        params_.get(layer_name(l, "ln2.b")));
  }
  Tensor cls_state = slice_rows(x, 0, 1);
  Tensor logits = affine(cls_state, params_.get("head.w"), params_.get("head.b"));
  return reshape(logits, {static_cast<std::size_t>(cfg_.classes)});
}

AttentionTrace TransformerWeakLearner::trace_of(const std::vector<int>& tokens) const {
  NoGradGuard ng;
  AttentionTrace trace;
  forward(tokens, &trace);
  return trace;
}

Tensor TransformerWeakLearner::forward_train(const Sample& sample) {
  check(std::holds_alternative<std::vector<int>>(sample),
        "transformer: expected a sequence sample");
  return forward(std::get<std::vector<int>>(sample), nullptr);
}

std::vector<double> TransformerWeakLearner::score(const Sample& viewed) const {
  NoGradGuard ng;
  check(std::holds_alternative<std::vector<int>>(viewed),
        "transformer: expected a sequence sample");
  Tensor out = forward(std::get<std::vector<int>>(viewed), nullptr);
  return {out.values().begin(), out.values().end()};
}

void TransformerWeakLearner::copy_parameters_from(
    const TransformerWeakLearner& src) {
  check(cfg_ == src.cfg_,
        "transformer warm start: architecture configuration mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i)
    params_.copy_values_from(src.params_, params_.name_at(i));
}

TransformerWeakLearner transfer_transformer(const TransformerWeakLearner& src) {
  TransformerWeakLearner out;
  out = src;  // copies the config and the param handles
  // deep-copy the parameters so training the copy leaves the source alone
  ParamStore cloned = src.params().clone();
  out.params() = std::move(cloned);
  return out;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

namespace {

enum class LossKind { SquareToTargets, CrossEntropyToLabels };

double run_training(TrainableModel& model, const std::vector<Sample>& inputs,
                    const Matrix& targets, const std::vector<int>& labels,
                    std::span<const double> loss_scales, const TrainConfig& cfg,
                    LossKind loss_kind) {
  const std::size_t n = inputs.size();
  check(n > 0, "train: no inputs");
  if (loss_kind == LossKind::SquareToTargets)
    check(targets.rows == n, "train: targets misaligned with inputs");
  else
    check(labels.size() == n, "train: labels misaligned with inputs");
  check(loss_scales.empty() || loss_scales.size() == n,
        "train: loss scales misaligned with inputs");
  check(cfg.epochs >= 0 && cfg.batch_size >= 1, "train: bad epoch/batch config");

  auto scale_of = [&](std::size_t i) {
    return loss_scales.empty() ? 1.0 : loss_scales[i];
  };

  auto sample_loss = [&](std::size_t i) -> Tensor {
    Tensor out = model.forward_train(inputs[i]);
    Tensor loss;
    if (loss_kind == LossKind::SquareToTargets) {
      Tensor target(std::vector<std::size_t>{targets.cols},
                    std::vector<double>(targets.row(i).begin(),
                                        targets.row(i).end()));
      Tensor diff = out - target;
      loss = sum_all(diff * diff);
    } else {
      loss = boosting::risk_loss_node(out, labels[i], boosting::RiskKind::CrossEntropy);
    }
    const double s = scale_of(i);
    return s == 1.0 ? loss : scale(loss, s);
  };

  auto mean_eval_loss = [&]() {
    NoGradGuard ng;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += sample_loss(i).scalar_value();
    return total / static_cast<double>(n);
  };

  if (cfg.epochs == 0) return mean_eval_loss();

  const long total_steps =
      static_cast<long>(cfg.epochs) *
      static_cast<long>((n + cfg.batch_size - 1) / cfg.batch_size);
  long step = 0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5151, static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      model.params().zero_grad();
      Tensor batch_loss;
      for (std::size_t bi = start; bi < stop; ++bi) {
        Tensor l = sample_loss(order[bi]);
        batch_loss = batch_loss.defined() ? batch_loss + l : l;
      }
      batch_loss = scale(batch_loss, 1.0 / static_cast<double>(stop - start));
      if (!std::isfinite(batch_loss.scalar_value()))
        throw Error("train: non-finite loss at epoch " + std::to_string(epoch) +
                    ", batch " + std::to_string(start / cfg.batch_size));
      backward(batch_loss);

      AdamConfig adam = cfg.adam;
      if (cfg.warmup_ratio >= 0.0) {
        // linear warmup to the base rate, then linear decay to zero
        const double warm_steps =
            std::max(1.0, cfg.warmup_ratio * static_cast<double>(total_steps));
        const double s = static_cast<double>(step);
        double factor;
        if (s < warm_steps)
          factor = (s + 1.0) / warm_steps;
        else
          factor = std::max(0.0, static_cast<double>(total_steps - s) /
                                     std::max(1.0, static_cast<double>(total_steps) -
                                                       warm_steps));
        adam.lr *= factor;
      }
      adam_step(model.params(), adam);
      ++step;
    }
  }
  return mean_eval_loss();
}

}  // namespace

double train_to_weights(TrainableModel& model, const std::vector<Sample>& inputs,
                        const Matrix& targets, std::span<const double> loss_scales,
                        const TrainConfig& cfg) {
  return run_training(model, inputs, targets, {}, loss_scales, cfg,
                      LossKind::SquareToTargets);
}

double train_to_labels(TrainableModel& model, const std::vector<Sample>& inputs,
                       const std::vector<int>& labels, const TrainConfig& cfg) {
  return run_training(model, inputs, Matrix{}, labels, {}, cfg,
                      LossKind::CrossEntropyToLabels);
}

}  // namespace fgb::learners
