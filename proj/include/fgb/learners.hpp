#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fgb/boosting.hpp"
#include "fgb/dataset.hpp"
#include "fgb/nn.hpp"
#include "fgb/optim.hpp"
#include "fgb/subgrid.hpp"

namespace fgb::learners {

// Anything the shared training loop can fit to per-sample target vectors.
class TrainableModel {
 public:
  virtual ~TrainableModel() = default;
  virtual Tensor forward_train(const Sample& sample) = 0;  // logits on the tape
  virtual ParamStore& params() = 0;
  virtual const ParamStore& params() const = 0;
};

// ---- CNN weak learner ----

struct CnnConfig {
  int in_channels = 1;
  std::vector<int> channels{8, 16};  // conv stack; each conv is followed by
                                     // 2x2 max-pool and ReLU
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  int classes = 2;
};

// Feature-map extents produced by the conv/pool stack on an input grid.
// Throws when the grid is below the stack's minimum extent.
std::pair<std::size_t, std::size_t> extractor_output_extents(
    const CnnConfig& cfg, std::size_t h, std::size_t w);
std::size_t head_input_width(const CnnConfig& cfg, std::size_t h, std::size_t w);

// Convolutional learner split into an extent-agnostic extractor (the conv
// stack) and a grid-specific linear classifier head.
class CnnWeakLearner : public TrainableModel, public boosting::WeakModel {
 public:
  static CnnWeakLearner fresh(const CnnConfig& cfg, std::size_t grid_h,
                              std::size_t grid_w, uint64_t seed);
  // New learner around existing extractor parameters (shared nothing: the
  // store is cloned) plus a freshly initialized head for the given grid.
  static CnnWeakLearner from_extractor(const ParamStore& extractor,
                                       const CnnConfig& cfg, std::size_t grid_h,
                                       std::size_t grid_w, uint64_t seed);

  const CnnConfig& config() const { return cfg_; }
  std::size_t grid_height() const { return grid_h_; }
  std::size_t grid_width() const { return grid_w_; }

  Tensor forward(const Tensor& image) const;           // logits [M]
  Tensor forward_features(const Tensor& image) const;  // extractor output

  Tensor forward_train(const Sample& sample) override;
  ParamStore& params() override { return params_; }
  const ParamStore& params() const override { return params_; }

  std::vector<double> score(const Sample& viewed) const override;
  int output_width() const override { return cfg_.classes; }

 private:
  CnnConfig cfg_;
  std::size_t grid_h_ = 0, grid_w_ = 0;
  ParamStore params_;
};

// Deep copy of the extractor parameters only; the source is untouched.
ParamStore transfer_extractor(const CnnWeakLearner& src);

// Probe for pixel scoring: the incumbent learner's extractor composed with
// the basic learner's classifier, parameters shared read-only. Errors when
// the basic head cannot accept the extractor's full-grid feature width.
subgrid::ProbeModel make_probe_model(const CnnWeakLearner& incumbent,
                                     const CnnWeakLearner& basic);

// ---- transformer weak learner ----

struct TransformerConfig {
  int layers = 2;
  int heads = 2;
  int d_model = 32;
  int ffn_hidden = 64;
  int vocab_size = 0;
  int max_len = 64;
  int classes = 2;

  bool operator==(const TransformerConfig&) const = default;
};

// BERT-style encoder classifier: the final hidden state of the leading
// classification token feeds a linear head. Accepts any sequence length up
// to max_len and records the full attention trace on demand.
class TransformerWeakLearner : public TrainableModel, public boosting::WeakModel {
 public:
  static TransformerWeakLearner fresh(const TransformerConfig& cfg, uint64_t seed);

  const TransformerConfig& config() const { return cfg_; }

  Tensor forward(const std::vector<int>& tokens, AttentionTrace* trace) const;
  AttentionTrace trace_of(const std::vector<int>& tokens) const;

  Tensor forward_train(const Sample& sample) override;
  ParamStore& params() override { return params_; }
  const ParamStore& params() const override { return params_; }

  std::vector<double> score(const Sample& viewed) const override;
  int output_width() const override { return cfg_.classes; }

  // Copies all parameter values from an identically configured source.
  void copy_parameters_from(const TransformerWeakLearner& src);

 private:
  TransformerConfig cfg_;
  ParamStore params_;
};

// Full warm-start copy, embeddings included; the source is untouched.
TransformerWeakLearner transfer_transformer(const TransformerWeakLearner& src);

// ---- training loop ----

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  AdamConfig adam;
  uint64_t seed = 0;
  // linear learning-rate decay with a warmup fraction of total steps;
  // negative disables the schedule
  double warmup_ratio = -1.0;
};

// Minimizes sum_i scale_i * ||g(x_i) - t_i||^2 by seeded mini-batch
// ADAM/AdamW. Returns the post-training mean per-sample (scaled) loss;
// epochs = 0 evaluates without updating. Throws with the epoch/batch index
// if the loss goes non-finite.
double train_to_weights(TrainableModel& model, const std::vector<Sample>& inputs,
                        const Matrix& targets, std::span<const double> loss_scales,
                        const TrainConfig& cfg);

// Same loop against true labels with cross-entropy; used by the ensemble
// baselines and single-model runs.
double train_to_labels(TrainableModel& model, const std::vector<Sample>& inputs,
                       const std::vector<int>& labels, const TrainConfig& cfg);

}  // namespace fgb::learners
