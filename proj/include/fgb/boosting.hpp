#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fgb/attn_select.hpp"
#include "fgb/dataset.hpp"
#include "fgb/subgrid.hpp"

namespace fgb::boosting {

enum class RiskKind { ExponentialPairwise, CrossEntropy };

RiskKind risk_kind_from_string(const std::string& s);
std::string to_string(RiskKind kind);

using Labels = std::vector<int>;  // 0-based class indices

// Mean over samples of the per-sample classification loss. The
// exponential-pairwise loss is L(z, f) = sum_{j != z} exp(-1/2 (f_z - f_j));
// cross-entropy is the negative log-softmax likelihood.
double compute_risk(const Matrix& f_values, const Labels& labels, RiskKind kind);

// Weighted variant used on drawn multisets: rows carry per-row loss scales
// and the result is the scale-weighted mean (1/rows) sum_i s_i L_i.
double compute_risk_weighted(const Matrix& f_values, const Labels& labels,
                             RiskKind kind,
                             std::span<const double> row_scales);

// Boosting weights w(x_i, z_i) = -2 dL/df per sample row. The
// exponential-pairwise kind uses the closed form
//   w_k = -exp(-1/2 (f_z - f_k)), k != z;  w_z = sum_{j != z} exp(...),
// cross-entropy differentiates the recorded loss graph. Rows sum to zero
// with a positive entry exactly at the label column.
Matrix compute_weights(const Matrix& f_values, const Labels& labels, RiskKind kind);

// Per-sample loss built on the tape; the autodiff oracle route for weights.
Tensor risk_loss_node(const Tensor& f_row, int label, RiskKind kind);

// Regression targets for the weak learner: exactly the weight rows (beta = 1).
Matrix build_regression_target(const Matrix& weights);

struct LineSearchConfig {
  double alpha_max = 4.0;
  double tol = 1e-4;
};

// argmin over [0, alpha_max] of R[f + alpha g] by golden-section search; a
// monotone decreasing risk returns alpha_max, a flat or increasing one
// returns 0. The returned point never has higher risk than alpha = 0.
double line_search_alpha(const Matrix& f_values, const Matrix& g_values,
                         const Labels& labels, RiskKind kind,
                         const LineSearchConfig& cfg,
                         std::span<const double> row_scales = {});

// ---- ensemble ----

struct FullView {};
struct SubgridViewDesc {
  subgrid::SubgridMask mask;
};
struct VocabViewDesc {
  std::vector<int> kept;  // sorted token ids, includes the classification token
};
using FeatureView = std::variant<FullView, SubgridViewDesc, VocabViewDesc>;

Sample apply_view(const FeatureView& view, const Sample& raw);
bool view_is_identity(const FeatureView& view, const LabeledDataset& data);

// A trained weak learner usable for scoring; implementations live in the
// learner families.
class WeakModel {
 public:
  virtual ~WeakModel() = default;
  virtual std::vector<double> score(const Sample& viewed) const = 0;
  virtual int output_width() const = 0;
};

struct EnsembleRound {
  double alpha = 1.0;
  std::shared_ptr<const WeakModel> model;
  FeatureView view;
};

// f(x) = g_0(x^0) + sum_{t>=1} nu * alpha_t * g_t(x^t). The basic round
// enters unshrunk; an empty ensemble predicts the zero vector.
class Ensemble {
 public:
  Ensemble() = default;
  Ensemble(int classes, double nu, RiskKind risk)
      : classes_(classes), nu_(nu), risk_(risk) {}

  int classes() const { return classes_; }
  double nu() const { return nu_; }
  RiskKind risk() const { return risk_; }
  std::size_t rounds() const { return rounds_.size(); }
  const EnsembleRound& round(std::size_t t) const { return rounds_[t]; }

  double coefficient(std::size_t t) const {
    return t == 0 ? rounds_[t].alpha : nu_ * rounds_[t].alpha;
  }

  void append(EnsembleRound r) { rounds_.push_back(std::move(r)); }

  std::vector<double> predict_scores(const Sample& raw) const;
  int predict_label(const Sample& raw) const;  // argmax, ties to lower index

 private:
  int classes_ = 0;
  double nu_ = 1.0;
  RiskKind risk_ = RiskKind::ExponentialPairwise;
  std::vector<EnsembleRound> rounds_;
};

int argmax_label(std::span<const double> scores);

// ---- generic boosting round ----

// Cached training state threaded through rounds: the ensemble plus its
// incrementally maintained score matrix on the training inputs.
struct BoostState {
  Ensemble ensemble;
  const LabeledDataset* train = nullptr;
  Matrix f_train;  // [n, M]

  void init(const LabeledDataset& data, double nu, RiskKind risk);
};

struct TrainOutcome {
  std::shared_ptr<const WeakModel> model;
  double final_loss = 0.0;
};

// Hooks supplied per algorithm variant. Defaults: full view, all samples.
// Sample selection runs before view construction so a view builder may
// derive its statistics from the drawn samples.
struct RoundHooks {
  // Selects the training multiset; empty optional = all samples once.
  // Also returns per-drawn-row loss scales (1/(n p_i)) when sampling.
  std::function<std::optional<std::pair<std::vector<std::size_t>,
                                        std::vector<double>>>(
      int round, const Matrix& weights)>
      select_samples;
  // Builds this round's feature view from the current residual weights and
  // the drawn subset (empty = full pass).
  std::function<FeatureView(int round, const Matrix& weights,
                            std::span<const std::size_t> subset)>
      build_view;
  // Trains a weak learner on the viewed inputs against the target rows.
  std::function<TrainOutcome(int round, const std::vector<Sample>& viewed,
                             const Matrix& targets,
                             std::span<const double> loss_scales)>
      train;
};

struct RoundOutcome {
  double alpha = 0.0;
  Matrix weights;                       // residual weights used this round
  std::vector<std::size_t> subset;      // drawn indices (empty = full pass)
  std::vector<double> loss_scales;      // aligned with subset
  FeatureView view;
  std::shared_ptr<const WeakModel> model;
  double final_train_loss = 0.0;
};

// Trains the basic learner g_0 on the f = 0 residual weights and sets
// f(x) = g_0(x); the ensemble must be empty.
RoundOutcome basic_round(BoostState& state, const RoundHooks& hooks);

// One additive boosting round: residual weights on the current scores, view
// construction, optional sample drawing, weak-learner training, line search
// and the shrunk ensemble update. Throws without touching the ensemble if
// the trainer diverges.
RoundOutcome boost_round(BoostState& state, const RoundHooks& hooks,
                         const LineSearchConfig& ls);

}  // namespace fgb::boosting
